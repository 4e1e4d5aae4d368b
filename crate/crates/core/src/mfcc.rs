//! MFCC extraction: pre-emphasis, Hamming-windowed framing, periodogram,
//! Mel filterbank, log compression and an orthonormal type-II DCT.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DescriptorBag, PcmSignal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    /// Frame length in seconds.
    pub frame_length: f64,
    /// Hop between frame starts in seconds.
    pub hop: f64,
    pub filter_count: usize,
    pub coefficient_count: usize,
    /// FFT length; rounded up to a power of two no shorter than a frame.
    /// `None` picks the smallest such size.
    pub fft_size: Option<usize>,
    pub low_freq: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_freq: Option<f64>,
    pub log_floor: f64,
    pub pre_emphasis: f64,
    /// Append first and second order regression deltas.
    pub deltas: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_length: 0.025,
            hop: 0.010,
            filter_count: 26,
            coefficient_count: 13,
            fft_size: None,
            low_freq: 0.0,
            high_freq: None,
            log_floor: 1e-10,
            pre_emphasis: 0.97,
            deltas: false,
        }
    }
}

/// Sample-domain framing derived from an [`MfccConfig`] and a sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub frame_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coefficient_count == 0 || self.coefficient_count > self.filter_count {
            return Err(Error::InvalidConfig(format!(
                "coefficient_count {} must be in 1..={}",
                self.coefficient_count, self.filter_count
            )));
        }
        if !(self.hop > 0.0 && self.frame_length > self.hop) {
            return Err(Error::InvalidConfig(
                "frame_length must exceed hop, and hop must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::InvalidConfig("pre_emphasis must be in [0, 1)".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self, sample_rate: u32) -> Result<FrameGeometry> {
        self.validate()?;
        let sr = sample_rate as f64;
        let frame_samples = (self.frame_length * sr).round() as usize;
        let hop_samples = (self.hop * sr).round() as usize;
        if frame_samples == 0 || hop_samples == 0 {
            return Err(Error::InvalidConfig(format!(
                "sample rate {sample_rate} Hz yields an empty frame or hop"
            )));
        }
        let requested = self.fft_size.unwrap_or(0).max(frame_samples);
        Ok(FrameGeometry {
            frame_samples,
            hop_samples,
            fft_size: requested.next_power_of_two(),
        })
    }

    fn high_freq_for(&self, sample_rate: u32) -> f64 {
        self.high_freq.unwrap_or(sample_rate as f64 / 2.0)
    }

    /// Output dimension per frame.
    pub fn output_dim(&self) -> usize {
        if self.deltas {
            3 * self.coefficient_count
        } else {
            self.coefficient_count
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Pre-emphasized, Hamming-windowed frames.
pub fn frame_signal(signal: &PcmSignal, config: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let geo = config.geometry(signal.sample_rate)?;
    let n = signal.samples.len();
    if n < geo.frame_samples {
        return Err(Error::InsufficientSamples {
            needed: geo.frame_samples,
            found: n,
        });
    }
    let a = config.pre_emphasis;
    let x = &signal.samples;
    let emphasized: Vec<f64> = (0..n)
        .map(|i| if i == 0 { x[0] } else { x[i] - a * x[i - 1] })
        .collect();
    let window = hamming(geo.frame_samples);
    let count = (n - geo.frame_samples) / geo.hop_samples + 1;
    Ok((0..count)
        .map(|f| {
            let start = f * geo.hop_samples;
            emphasized[start..start + geo.frame_samples]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Center frequencies (Hz) of the triangular filters.
pub fn mel_center_frequencies(config: &MfccConfig, sample_rate: u32) -> Vec<f64> {
    let edges = mel_edges(config, sample_rate);
    edges[1..edges.len() - 1].to_vec()
}

fn mel_edges(config: &MfccConfig, sample_rate: u32) -> Vec<f64> {
    let lo = hz_to_mel(config.low_freq);
    let hi = hz_to_mel(config.high_freq_for(sample_rate));
    let m = config.filter_count + 1;
    (0..=m)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / m as f64))
        .collect()
}

/// `filter_count x (fft_size/2 + 1)` triangular filters, peaks of height 1
/// at the Mel-spaced centers, feet at the neighbouring centers.
pub fn mel_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let geo = config.geometry(sample_rate)?;
    let nyquist = sample_rate as f64 / 2.0;
    let high = config.high_freq_for(sample_rate);
    if !(config.low_freq >= 0.0 && config.low_freq < high && high <= nyquist) {
        return Err(Error::InvalidConfig(format!(
            "filterbank range {}..{high} Hz must lie within 0..{nyquist} Hz",
            config.low_freq
        )));
    }
    let edges = mel_edges(config, sample_rate);
    let bins = geo.fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / geo.fft_size as f64;
    let mut bank = Vec::with_capacity(config.filter_count);
    for m in 1..=config.filter_count {
        let (left, center, right) = (edges[m - 1], edges[m], edges[m + 1]);
        let filter: Vec<f64> = (0..bins)
            .map(|b| {
                let f = b as f64 * bin_hz;
                if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                }
            })
            .collect();
        if filter.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "filter {m} covers no FFT bin; use fewer filters or a larger fft_size"
            )));
        }
        bank.push(filter);
    }
    Ok(bank)
}

/// In-place iterative radix-2 FFT planner.
pub struct Fft {
    size: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bit_reverse: Vec<usize>,
}

impl Fft {
    pub fn new(size: usize) -> Self {
        assert!(size.is_power_of_two(), "fft size must be a power of two");
        let bits = size.trailing_zeros();
        let bit_reverse = (0..size)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let half = size / 2;
        let cos = (0..half).map(|k| (2.0 * PI * k as f64 / size as f64).cos()).collect();
        let sin = (0..half).map(|k| -(2.0 * PI * k as f64 / size as f64).sin()).collect();
        Fft {
            size,
            cos,
            sin,
            bit_reverse,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Forward transform `X_k = sum_n x_n e^{-2 pi i k n / N}`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.size;
        assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bit_reverse[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * stride], self.sin[k * stride]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// `|FFT|^2 / fft_size` over bins `0..=fft_size/2` of a zero-padded frame.
pub fn periodogram(fft: &Fft, frame: &[f64]) -> Vec<f64> {
    let n = fft.size();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let m = frame.len().min(n);
    re[..m].copy_from_slice(&frame[..m]);
    fft.forward(&mut re, &mut im);
    (0..=n / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]) / n as f64)
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2_orthonormal(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of [`dct2_orthonormal`] (orthonormal DCT-III). Missing trailing
/// coefficients are treated as zero; `len` is the output length.
pub fn idct_orthonormal(coeffs: &[f64], len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .take(len)
                .map(|(k, c)| {
                    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    scale * c * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

/// Log filterbank energies for every frame.
pub fn log_mel_energies(signal: &PcmSignal, config: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let frames = frame_signal(signal, config)?;
    let bank = mel_filterbank(config, signal.sample_rate)?;
    let geo = config.geometry(signal.sample_rate)?;
    let fft = Fft::new(geo.fft_size);
    Ok(frames
        .par_iter()
        .map(|frame| {
            let power = periodogram(&fft, frame);
            bank.iter()
                .map(|filter| {
                    let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                    e.max(config.log_floor).ln()
                })
                .collect()
        })
        .collect())
}

pub fn extract_mfcc(signal: &PcmSignal, config: &MfccConfig) -> Result<DescriptorBag> {
    let log_energies = log_mel_energies(signal, config)?;
    let c = config.coefficient_count;
    let cepstra: Vec<Vec<f64>> = log_energies
        .par_iter()
        .map(|e| dct2_orthonormal(e)[..c].to_vec())
        .collect();
    let rows = if config.deltas {
        let d1 = regression_deltas(&cepstra, 2);
        let d2 = regression_deltas(&d1, 2);
        cepstra
            .iter()
            .zip(&d1)
            .zip(&d2)
            .map(|((a, b), c)| [a.as_slice(), b, c].concat())
            .collect()
    } else {
        cepstra
    };
    DescriptorBag::from_rows(&rows)
}

/// Standard regression deltas over `+-width` frames with edge replication.
fn regression_deltas(rows: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as isize;
    let denom: f64 = 2.0 * (1..=width).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            let mut out = vec![0.0; rows[0].len()];
            for k in 1..=width as isize {
                let next = &rows[(t + k).min(n - 1) as usize];
                let prev = &rows[(t - k).max(0) as usize];
                for j in 0..out.len() {
                    out[j] += k as f64 * (next[j] - prev[j]);
                }
            }
            out.iter_mut().for_each(|v| *v /= denom);
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(samples: Vec<f64>) -> PcmSignal {
        PcmSignal {
            sample_rate: 16000,
            samples,
        }
    }

    #[test]
    fn default_geometry() {
        let geo = MfccConfig::default().geometry(16000).unwrap();
        assert_eq!(
            geo,
            FrameGeometry {
                frame_samples: 400,
                hop_samples: 160,
                fft_size: 512
            }
        );
        let cfg = MfccConfig {
            fft_size: Some(600),
            ..MfccConfig::default()
        };
        assert_eq!(cfg.geometry(16000).unwrap().fft_size, 1024);
    }

    #[test]
    fn frame_counts() {
        let cfg = MfccConfig::default();
        // Direct count of start offsets 0, 160, ... with start + 400 <= 16000.
        let direct = (0..).map(|f| f * 160).take_while(|s| s + 400 <= 16000).count();
        assert_eq!(direct, 98);
        assert_eq!(frame_signal(&signal(vec![0.1; 16000]), &cfg).unwrap().len(), direct);
        assert_eq!(frame_signal(&signal(vec![0.1; 400]), &cfg).unwrap().len(), 1);
        assert!(matches!(
            frame_signal(&signal(vec![0.1; 399]), &cfg),
            Err(Error::InsufficientSamples { needed: 400, found: 399 })
        ));
    }

    #[test]
    fn constant_signal_frames() {
        let cfg = MfccConfig::default();
        let frames = frame_signal(&signal(vec![0.5; 2000]), &cfg).unwrap();
        let w = hamming(400);
        assert!((frames[0][0] - 0.5 * w[0]).abs() < 1e-15);
        for i in 1..400 {
            assert!((frames[0][i] - 0.5 * 0.03 * w[i]).abs() < 1e-12);
        }
        for f in &frames[1..] {
            for i in 0..400 {
                assert!((f[i] - 0.5 * 0.03 * w[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filter_centers_increase_within_band() {
        let cfg = MfccConfig {
            low_freq: 100.0,
            high_freq: Some(7000.0),
            ..MfccConfig::default()
        };
        let centers = mel_center_frequencies(&cfg, 16000);
        assert_eq!(centers.len(), 26);
        assert!(centers.windows(2).all(|w| w[0] < w[1]));
        assert!(centers.iter().all(|&c| (100.0..=7000.0).contains(&c)));
        let bank = mel_filterbank(&cfg, 16000).unwrap();
        assert_eq!((bank.len(), bank[0].len()), (26, 257));
        assert!(bank.iter().flatten().all(|&w| w >= 0.0));
    }

    #[test]
    fn too_many_filters_rejected() {
        let cfg = MfccConfig {
            filter_count: 200,
            ..MfccConfig::default()
        };
        assert!(matches!(mel_filterbank(&cfg, 16000), Err(Error::InvalidConfig(_))));
        let cfg = MfccConfig {
            high_freq: Some(9000.0),
            ..MfccConfig::default()
        };
        assert!(mel_filterbank(&cfg, 16000).is_err());
    }

    #[test]
    fn fft_matches_naive_dft() {
        let n = 16;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let fft = Fft::new(n);
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft.forward(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                sr += v * a.cos();
                si += v * a.sin();
            }
            assert!((re[k] - sr).abs() < 1e-12 && (im[k] - si).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_round_trip() {
        let x: Vec<f64> = (0..26).map(|i| (i as f64 * 0.37).sin() * 3.0 - 1.0).collect();
        let back = idct_orthonormal(&dct2_orthonormal(&x), x.len());
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn truncated_dct_is_least_squares() {
        // Orthonormality: the truncated reconstruction error equals the
        // energy of the dropped coefficients.
        let x: Vec<f64> = (0..26).map(|i| ((i * i) as f64 * 0.11).cos()).collect();
        let c = dct2_orthonormal(&x);
        let approx = idct_orthonormal(&c[..13], 26);
        let err: f64 = x.iter().zip(&approx).map(|(a, b)| (a - b).powi(2)).sum();
        let dropped: f64 = c[13..].iter().map(|v| v * v).sum();
        assert!((err - dropped).abs() < 1e-10);
    }

    #[test]
    fn silence_gives_constant_cepstrum() {
        let cfg = MfccConfig::default();
        let bag = extract_mfcc(&signal(vec![0.0; 4000]), &cfg).unwrap();
        let c0 = 26f64.sqrt() * cfg.log_floor.ln();
        for row in bag.rows() {
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn deltas_triple_the_dimension() {
        let cfg = MfccConfig {
            deltas: true,
            ..MfccConfig::default()
        };
        let x: Vec<f64> = (0..3200).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        let bag = extract_mfcc(&signal(x), &cfg).unwrap();
        assert_eq!(bag.dim(), 39);
        assert_eq!(cfg.output_dim(), 39);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            MfccConfig {
                coefficient_count: 30,
                ..MfccConfig::default()
            },
            MfccConfig {
                hop: 0.03,
                ..MfccConfig::default()
            },
            MfccConfig {
                pre_emphasis: 1.0,
                ..MfccConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
