//! Binary and CSV exports for Fisher Vectors and descriptor bags.
//!
//! Both binary formats are little-endian and start with an 8-byte header:
//! two magic bytes, a `u16` version and two `u16` shape fields.
//!
//! Fisher Vector (`b"FV"`): header shape fields are `D` and `K`, then a
//! `u16`-length-prefixed UTF-8 mixture id, a flags byte (bit 0: normalized),
//! then `2DK` `f64` values.
//!
//! Descriptor bag (`b"DB"`): header shape fields are `D` and flags (bit 0:
//! per-row frame indices present), then a `u64` row count, `T x D` `f64`
//! values row-major, then `T` `u32` frame indices when flagged.

use std::io::{Read, Write};

use crate::data::DescriptorBag;
use crate::fisher::FisherVector;
use crate::{Error, Result};

const FV_MAGIC: &[u8; 2] = b"FV";
const BAG_MAGIC: &[u8; 2] = b"DB";
const VERSION: u16 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit the header")))
}

pub fn write_fisher_vector<W: Write>(mut w: W, fv: &FisherVector) -> Result<()> {
    if fv.values.len() != 2 * fv.dim * fv.components {
        return Err(Error::DimensionMismatch {
            expected: 2 * fv.dim * fv.components,
            found: fv.values.len(),
        });
    }
    let mut buf = Vec::with_capacity(16 + fv.gmm_id.len() + 8 * fv.values.len());
    buf.extend_from_slice(FV_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u16(fv.dim, "dimension")?.to_le_bytes());
    buf.extend_from_slice(&to_u16(fv.components, "component count")?.to_le_bytes());
    buf.extend_from_slice(&to_u16(fv.gmm_id.len(), "id length")?.to_le_bytes());
    buf.extend_from_slice(fv.gmm_id.as_bytes());
    buf.push(u8::from(fv.normalized));
    for v in &fv.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 2]) -> Result<(u16, u16)> {
    let h: [u8; 8] = read_exact(r)?;
    if &h[..2] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &h[..2],
            std::str::from_utf8(magic).unwrap_or("")
        )));
    }
    let version = u16::from_le_bytes([h[2], h[3]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok((u16::from_le_bytes([h[4], h[5]]), u16::from_le_bytes([h[6], h[7]])))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(io_err)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_fisher_vector<R: Read>(mut r: R) -> Result<FisherVector> {
    let (dim, components) = read_header(&mut r, FV_MAGIC)?;
    let id_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(io_err)?;
    let gmm_id = String::from_utf8(id).map_err(|e| Error::Format(e.to_string()))?;
    let [flags] = read_exact::<_, 1>(&mut r)?;
    let (dim, components) = (dim as usize, components as usize);
    let values = read_f64s(&mut r, 2 * dim * components)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fisher vector file".into()));
    }
    Ok(FisherVector {
        values,
        gmm_id,
        dim,
        components,
        normalized: flags & 1 == 1,
    })
}

pub fn write_bag<W: Write>(mut w: W, bag: &DescriptorBag) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * bag.as_slice().len());
    buf.extend_from_slice(BAG_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u16(bag.dim(), "dimension")?.to_le_bytes());
    let flags: u16 = u16::from(bag.timestamps().is_some());
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(bag.len() as u64).to_le_bytes());
    for v in bag.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(ts) = bag.timestamps() {
        for t in ts {
            buf.extend_from_slice(&t.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_bag<R: Read>(mut r: R) -> Result<DescriptorBag> {
    let (dim, flags) = read_header(&mut r, BAG_MAGIC)?;
    let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    let data = read_f64s(&mut r, rows * dim as usize)?;
    let timestamps = if flags & 1 == 1 {
        let mut bytes = vec![0u8; rows * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect(),
        )
    } else {
        None
    };
    DescriptorBag::new(dim as usize, data, timestamps)
}

/// One row per value: `block,component,dimension,value`.
pub fn write_fisher_csv<W: Write>(mut w: W, fv: &FisherVector) -> Result<()> {
    let mut out = String::from("block,component,dimension,value\n");
    for (i, v) in fv.values.iter().enumerate() {
        let block = if i < fv.dim * fv.components { "mu" } else { "sigma" };
        let within = i % (fv.dim * fv.components);
        out.push_str(&format!(
            "{block},{},{},{v}\n",
            within / fv.dim,
            within % fv.dim
        ));
    }
    w.write_all(out.as_bytes()).map_err(io_err)
}

/// One row per descriptor, preceded by the frame index when present.
pub fn write_bag_csv<W: Write>(mut w: W, bag: &DescriptorBag) -> Result<()> {
    let mut header: Vec<String> = Vec::new();
    if bag.timestamps().is_some() {
        header.push("frame".into());
    }
    header.extend((0..bag.dim()).map(|j| format!("d{j}")));
    let mut out = header.join(",") + "\n";
    for (i, row) in bag.rows().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(ts) = bag.timestamps() {
            fields.push(ts[i].to_string());
        }
        fields.extend(row.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_header_layout() {
        let fv = FisherVector {
            values: vec![1.5, -2.0, 0.25, 3.0],
            gmm_id: "abc".into(),
            dim: 2,
            components: 1,
            normalized: true,
        };
        let mut buf = Vec::new();
        write_fisher_vector(&mut buf, &fv).unwrap();
        assert_eq!(&buf[..8], &[b'F', b'V', 1, 0, 2, 0, 1, 0]);
        assert_eq!(&buf[8..13], &[3, 0, b'a', b'b', b'c']);
        assert_eq!(buf[13], 1);
        assert_eq!(buf.len(), 14 + 32);
        assert_eq!(read_fisher_vector(&buf[..]).unwrap(), fv);
        assert!(read_fisher_vector(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn bag_round_trip_with_frames() {
        let bag = DescriptorBag::new(2, vec![1.0, 2.0, 3.0, 4.0], Some(vec![7, 9])).unwrap();
        let mut buf = Vec::new();
        write_bag(&mut buf, &bag).unwrap();
        assert_eq!(read_bag(&buf[..]).unwrap(), bag);
        let mut csv = Vec::new();
        write_bag_csv(&mut csv, &bag).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "frame,d0,d1\n7,1,2\n9,3,4\n");
        assert!(read_fisher_vector(&buf[..]).is_err());
    }

    #[test]
    fn fisher_csv_blocks() {
        let fv = FisherVector {
            values: vec![1.0, 2.0, 3.0, 4.0],
            gmm_id: String::new(),
            dim: 1,
            components: 2,
            normalized: false,
        };
        let mut csv = Vec::new();
        write_fisher_csv(&mut csv, &fv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "block,component,dimension,value\nmu,0,0,1\nmu,1,0,2\nsigma,0,0,3\nsigma,1,0,4\n"
        );
    }
}
