//! Dataset manifest, per-video records and loaders for the raw modality
//! artifacts (dense-trajectory descriptor text, PCM WAV audio).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::expression::ExpressionBits;
use crate::{Error, Result};

/// A variable-length set of fixed-dimension local feature vectors, stored
/// row-major. Rows optionally carry the frame index they were observed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorBag {
    dim: usize,
    data: Vec<f64>,
    timestamps: Option<Vec<u32>>,
}

impl DescriptorBag {
    pub fn new(dim: usize, data: Vec<f64>, timestamps: Option<Vec<u32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("descriptor dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        let len = data.len() / dim;
        if len == 0 {
            return Err(Error::Empty("descriptor bag has no rows".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("descriptor bag row {}", pos / dim)));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    found: ts.len(),
                });
            }
        }
        Ok(DescriptorBag {
            dim,
            data,
            timestamps,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Format(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        if rows.is_empty() {
            return Err(Error::Empty("descriptor bag has no rows".into()));
        }
        DescriptorBag::new(dim, data, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn timestamps(&self) -> Option<&[u32]> {
        self.timestamps.as_deref()
    }

    pub fn with_timestamps(mut self, timestamps: Vec<u32>) -> Result<Self> {
        if timestamps.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: timestamps.len(),
            });
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    /// New bag holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let timestamps = self
            .timestamps
            .as_ref()
            .map(|ts| indices.iter().map(|&i| ts[i]).collect());
        DescriptorBag::new(self.dim, data, timestamps)
    }

    /// Stacks several bags of equal dimension. Timestamps are dropped.
    pub fn concat<'a>(bags: impl IntoIterator<Item = &'a DescriptorBag>) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for bag in bags {
            match dim {
                None => dim = Some(bag.dim),
                Some(d) if d != bag.dim => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: bag.dim,
                    })
                }
                _ => {}
            }
            data.extend_from_slice(&bag.data);
        }
        let dim = dim.ok_or_else(|| Error::Empty("no bags to concatenate".into()))?;
        DescriptorBag::new(dim, data, None)
    }
}

/// Binary class label; deceptive is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Truthful,
    Deceptive,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Truthful),
            1 => Some(Label::Deceptive),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Truthful => 0,
            Label::Deceptive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Deceptive
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        u8::try_from(v)
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| serde::de::Error::custom(format!("label {v} is outside {{0, 1}}")))
    }
}

/// One trial video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub identity_id: String,
    pub label: Label,
    pub motion_path: PathBuf,
    pub audio_path: PathBuf,
    pub transcript_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_expression_labels: Option<Vec<ExpressionBits>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<VideoRecord>,
    pub class_counts: BTreeMap<u8, usize>,
}

impl DatasetManifest {
    pub fn new(records: Vec<VideoRecord>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert(r.video_id.as_str(), i) {
                return Err(Error::DuplicateVideo {
                    path: PathBuf::new(),
                    line: i + 1,
                    first_line: first + 1,
                    video_id: r.video_id.clone(),
                });
            }
        }
        let class_counts = class_counts(&records);
        if class_counts.len() < 2 {
            return Err(Error::SingleClass);
        }
        Ok(DatasetManifest {
            records,
            class_counts,
        })
    }

    /// Record indices grouped by identity, identities in sorted order.
    pub fn identities(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.identity_id.as_str()).or_default().push(i);
        }
        map
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn class_counts(records: &[VideoRecord]) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.label.as_u8()).or_insert(0) += 1;
    }
    counts
}

/// Loads a JSON-lines manifest. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<VideoRecord> = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(&first) = first_line.get(&record.video_id) {
            return Err(Error::DuplicateVideo {
                path: path.to_path_buf(),
                line: line_no,
                first_line: first,
                video_id: record.video_id,
            });
        }
        first_line.insert(record.video_id.clone(), line_no);
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("manifest {}", path.display())));
    }
    let class_counts = class_counts(&records);
    if class_counts.len() < 2 {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            message: "manifest must contain both truthful and deceptive videos".into(),
        });
    }
    Ok(DatasetManifest {
        records,
        class_counts,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Inclusive column index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub start: usize,
    pub end: usize,
}

impl ColumnRange {
    pub const fn new(start: usize, end: usize) -> Self {
        ColumnRange { start, end }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }
}

/// Column layout of the dense-trajectory tool's text output: 10 trajectory
/// info columns (frame number first), a 30-value trajectory shape, then the
/// HOG (96), HOF (108), MBHx (96) and MBHy (96) blocks. 436 columns in total.
pub mod idt_layout {
    use super::ColumnRange;

    pub const TOTAL_COLUMNS: usize = 436;
    pub const FRAME_COLUMN: usize = 0;
    pub const INFO: ColumnRange = ColumnRange::new(0, 9);
    pub const TRAJECTORY: ColumnRange = ColumnRange::new(10, 39);
    pub const HOG: ColumnRange = ColumnRange::new(40, 135);
    pub const HOF: ColumnRange = ColumnRange::new(136, 243);
    pub const MBH_X: ColumnRange = ColumnRange::new(244, 339);
    pub const MBH_Y: ColumnRange = ColumnRange::new(340, 435);
    pub const MBH: ColumnRange = ColumnRange::new(244, 435);
}

/// Descriptor block selectable from a dense-trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorBlock {
    Trajectory,
    Hog,
    Hof,
    #[default]
    Mbh,
    MbhX,
    MbhY,
}

impl DescriptorBlock {
    pub fn columns(self) -> ColumnRange {
        match self {
            DescriptorBlock::Trajectory => idt_layout::TRAJECTORY,
            DescriptorBlock::Hog => idt_layout::HOG,
            DescriptorBlock::Hof => idt_layout::HOF,
            DescriptorBlock::Mbh => idt_layout::MBH,
            DescriptorBlock::MbhX => idt_layout::MBH_X,
            DescriptorBlock::MbhY => idt_layout::MBH_Y,
        }
    }
}

/// Reads whitespace-separated descriptor rows, keeping `columns`.
pub fn load_trajectory_descriptors(
    path: impl AsRef<Path>,
    columns: ColumnRange,
) -> Result<DescriptorBag> {
    read_descriptor_file(path.as_ref(), columns, None)
}

/// As [`load_trajectory_descriptors`], also reading each row's frame index
/// from `frame_column`.
pub fn load_trajectory_descriptors_with_frames(
    path: impl AsRef<Path>,
    columns: ColumnRange,
    frame_column: usize,
) -> Result<DescriptorBag> {
    read_descriptor_file(path.as_ref(), columns, Some(frame_column))
}

fn read_descriptor_file(
    path: &Path,
    columns: ColumnRange,
    frame_column: Option<usize>,
) -> Result<DescriptorBag> {
    if columns.end < columns.start {
        return Err(Error::InvalidConfig(format!(
            "column range {}..={} is empty",
            columns.start, columns.end
        )));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut frames = Vec::new();
    let mut expected_cols = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let expected = *expected_cols.get_or_insert(tokens.len());
        if tokens.len() != expected {
            return Err(Error::Ragged {
                path: path.to_path_buf(),
                line: line_no,
                expected,
                found: tokens.len(),
            });
        }
        let needed = columns.end.max(frame_column.unwrap_or(0));
        if needed >= tokens.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                column: needed,
                message: format!("line has only {} columns", tokens.len()),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let v: f64 = tokens[col].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                column: col,
                message: format!("not a number: {:?}", tokens[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: col,
                    message: format!("non-finite value {:?}", tokens[col]),
                });
            }
            Ok(v)
        };
        if let Some(fc) = frame_column {
            let v = parse(fc)?;
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: fc,
                    message: format!("frame index {v} is not a nonnegative integer"),
                });
            }
            frames.push(v as u32);
        }
        for col in columns.start..=columns.end {
            data.push(parse(col)?);
        }
    }
    if data.is_empty() {
        return Err(Error::Empty(format!("descriptor file {}", path.display())));
    }
    let timestamps = frame_column.map(|_| frames);
    DescriptorBag::new(columns.width(), data, timestamps)
}

/// Mono PCM audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

/// Reads an uncompressed WAV file (16-bit integer or 32-bit float). Channels
/// are averaged to mono; integer samples are divided by 32768.
pub fn load_audio(path: impl AsRef<Path>) -> Result<PcmSignal> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported sample format {format:?} with {bits} bits",
                path.display()
            )))
        }
    }
    .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    if interleaved.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("audio {}", path.display())));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(PcmSignal {
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled by 32767.
pub fn write_wav_i16(path: impl AsRef<Path>, signal: &PcmSignal) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in &signal.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}
