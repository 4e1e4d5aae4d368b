//! Seeded synthetic datasets with planted, partially informative cues in
//! every modality.
//!
//! Each video has a binary label. Motion, audio, transcript and facial
//! expressions each carry an independent latent cue that agrees with the
//! label with probability `agreement`. Clip-level micro-expressions fire
//! more often when the expression cue is positive and leave a small
//! signature in the clip's motion descriptors.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::data::{write_manifest, write_wav_i16, DatasetManifest, DescriptorBag, Label, PcmSignal, VideoRecord};
use crate::experiment::{ComponentCounts, ExperimentConfig, VideoData};
use crate::expression::{
    clip_labels_for, clip_windows, window_frames, DetectorOptions, DetectorOutput, ExpressionBits, EXPRESSION_COUNT,
};
use crate::gmm::EmConfig;
use crate::mfcc::{extract_mfcc, MfccConfig};
use crate::transcript::{embed_transcript, tokenize, EmbeddingTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub identities: usize,
    /// Videos per identity are drawn uniformly from this inclusive range.
    pub videos_per_identity: (usize, usize),
    pub seed: u64,
    /// Probability that the motion, audio and transcript cues equal the
    /// label.
    pub agreement: f64,
    /// Probability that the expression cue equals the label.
    pub expression_agreement: f64,
    pub motion_dim: usize,
    pub fps: f64,
    pub clip_seconds: f64,
    /// Video length range in seconds.
    pub duration: (f64, f64),
    pub sample_rate: u32,
    pub audio_seconds: f64,
    pub embedding_dim: usize,
    pub transcript_words: usize,
    /// Per-clip firing probability of each expression under a positive
    /// and a negative expression cue.
    pub expression_rate_high: f64,
    pub expression_rate_low: f64,
    /// Fraction of an active clip's rows carrying an expression signature.
    pub expression_strength: f64,
    /// Length of the signature shift.
    pub expression_shift: f64,
    /// Subtract each video's mean signature from all of its rows.
    pub center_expressions: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            identities: 40,
            videos_per_identity: (1, 3),
            seed: 0,
            agreement: 0.75,
            expression_agreement: 0.85,
            motion_dim: 16,
            fps: 15.0,
            clip_seconds: 4.0,
            duration: (16.0, 28.0),
            sample_rate: 16000,
            audio_seconds: 1.5,
            embedding_dim: 8,
            transcript_words: 30,
            expression_rate_high: 0.5,
            expression_rate_low: 0.1,
            expression_strength: 0.5,
            expression_shift: 3.0,
            center_expressions: true,
        }
    }
}

impl SyntheticConfig {
    /// Experiment settings sized for this data, with probability-calibrated
    /// detector scores.
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            components: ComponentCounts {
                motion: 8,
                audio: 2,
                transcript: 2,
            },
            em: EmConfig {
                max_iterations: 100,
                ..EmConfig::default()
            },
            detector: DetectorOptions {
                output: DetectorOutput::Probability,
                ..DetectorOptions::default()
            },
            fps: self.fps,
            clip_seconds: self.clip_seconds,
            classifiers: ClassifierSpec::default_suite(),
            ..ExperimentConfig::default()
        }
    }
}

/// Raw artifacts of one synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub identity_id: String,
    pub label: Label,
    pub motion: DescriptorBag,
    pub audio: PcmSignal,
    pub transcript: String,
    pub clip_labels: Vec<ExpressionBits>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub videos: Vec<SyntheticVideo>,
    pub embeddings: EmbeddingTable,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

const NEUTRAL_WORDS: usize = 24;
const CUE_WORDS: usize = 10;

fn vocabulary() -> Vec<(String, usize)> {
    let mut words = Vec::new();
    for i in 0..NEUTRAL_WORDS {
        words.push((format!("word{i}"), 0));
    }
    for i in 0..CUE_WORDS {
        words.push((format!("calm{i}"), 1));
        words.push((format!("tense{i}"), 2));
    }
    words
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    if config.identities < 2 || config.videos_per_identity.0 == 0 {
        return Err(Error::InvalidConfig("synthetic data needs at least 2 identities with videos".into()));
    }
    if config.motion_dim < 2 {
        return Err(Error::InvalidConfig("motion_dim must be at least 2".into()));
    }
    let window = window_frames(config.fps, config.clip_seconds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.motion_dim;

    // Each expression shifts rows along its own random unit direction.
    let directions: Vec<Vec<f64>> = (0..EXPRESSION_COUNT)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    // Word vectors: one center per group plus per-word jitter.
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..config.embedding_dim).map(|_| 1.5 * normal(&mut rng)).collect())
        .collect();
    let vocab = vocabulary();
    let entries: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .map(|(w, g)| {
            let v = centers[*g].iter().map(|c| c + 0.4 * normal(&mut rng)).collect();
            (w.clone(), v)
        })
        .collect();
    let embeddings = EmbeddingTable::from_entries(config.embedding_dim, entries)?;
    let groups: Vec<Vec<&str>> = (0..3)
        .map(|g| vocab.iter().filter(|(_, wg)| *wg == g).map(|(w, _)| w.as_str()).collect())
        .collect();

    let mut videos = Vec::new();
    let mut counter = 0usize;
    for p in 0..config.identities {
        let identity_id = format!("person{p:02}");
        let offset: Vec<f64> = (0..d).map(|_| 0.3 * normal(&mut rng)).collect();
        let pitch_offset = 15.0 * normal(&mut rng);
        let n = rng.random_range(config.videos_per_identity.0..=config.videos_per_identity.1.max(config.videos_per_identity.0));
        for _ in 0..n {
            counter += 1;
            let label = if rng.random::<bool>() { Label::Deceptive } else { Label::Truthful };
            let y = label.is_positive();
            let mut cue = |p: f64| if rng.random::<f64>() < p { y } else { !y };
            let motion_cue = cue(config.agreement);
            let audio_cue = cue(config.agreement);
            let text_cue = cue(config.agreement);
            let face_cue = cue(config.expression_agreement);

            // Motion rows, one per frame.
            let seconds = rng.random_range(config.duration.0..=config.duration.1);
            let frames = ((seconds * config.fps).round() as u32).max(1);
            let windows = clip_windows(frames, window);
            let rate = if face_cue {
                config.expression_rate_high
            } else {
                config.expression_rate_low
            };
            let clip_labels: Vec<ExpressionBits> = windows
                .iter()
                .map(|_| ExpressionBits(std::array::from_fn(|_| rng.random::<f64>() < rate)))
                .collect();
            let cue_rate = if motion_cue { 0.35 } else { 0.1 };
            let mut data = Vec::with_capacity(frames as usize * d);
            let mut stamps = Vec::with_capacity(frames as usize);
            let mut expr_sum = vec![0.0; d];
            for (w, &(start, end)) in windows.iter().enumerate() {
                let active: Vec<usize> = (0..EXPRESSION_COUNT).filter(|&e| clip_labels[w].0[e]).collect();
                for frame in start..end {
                    let mut row: Vec<f64> = (0..d).map(|j| offset[j] + normal(&mut rng)).collect();
                    if rng.random::<f64>() < cue_rate {
                        row[0] += 2.5;
                        row[1] += 2.5;
                    }
                    if !active.is_empty() && rng.random::<f64>() < config.expression_strength {
                        let e = *active.choose(&mut rng).expect("nonempty");
                        for ((r, acc), u) in row.iter_mut().zip(expr_sum.iter_mut()).zip(&directions[e]) {
                            *r += config.expression_shift * u;
                            *acc += config.expression_shift * u;
                        }
                    }
                    data.extend(row);
                    stamps.push(frame);
                }
            }
            if config.center_expressions {
                // Express the signatures relative to the video's average pose.
                let mut mean = vec![0.0; d];
                for (m, x) in mean.iter_mut().zip(&expr_sum) {
                    *m = x / f64::from(frames);
                }
                for row in data.chunks_exact_mut(d) {
                    for (r, m) in row.iter_mut().zip(&mean) {
                        *r -= m;
                    }
                }
            }
            let motion = DescriptorBag::new(d, data, Some(stamps))?;

            // Audio: 100 ms voiced syllables whose pitch spread is centered
            // by the cue, plus noise.
            let center = if audio_cue { 220.0 } else { 280.0 } + pitch_offset;
            let amplitude = 0.2 + 0.2 * rng.random::<f64>();
            let rate = f64::from(config.sample_rate);
            let len = (config.audio_seconds * rate) as usize;
            let syllable = (0.1 * rate) as usize;
            let mut phase = rng.random::<f64>() * std::f64::consts::TAU;
            let mut pitch = center;
            let mut samples = Vec::with_capacity(len);
            for i in 0..len {
                if i % syllable == 0 {
                    pitch = (center + 40.0 * normal(&mut rng)).max(60.0);
                }
                phase += std::f64::consts::TAU * pitch / rate;
                let tone = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
                samples.push((amplitude * tone / 1.75 + 0.02 * normal(&mut rng)).clamp(-1.0, 1.0));
            }
            let audio = PcmSignal {
                sample_rate: config.sample_rate,
                samples,
            };

            // Transcript: mostly neutral words, some from the cue's group.
            let cue_group = if text_cue { &groups[2] } else { &groups[1] };
            let words: Vec<&str> = (0..config.transcript_words)
                .map(|_| {
                    let g = if rng.random::<f64>() < 0.3 { cue_group } else { &groups[0] };
                    *g.choose(&mut rng).expect("nonempty group")
                })
                .collect();
            let mut transcript = words.join(" ");
            transcript.push('.');

            videos.push(SyntheticVideo {
                video_id: format!("video{counter:03}"),
                identity_id: identity_id.clone(),
                label,
                motion,
                audio,
                transcript,
                clip_labels,
            });
        }
    }
    let positives = videos.iter().filter(|v| v.label.is_positive()).count();
    if positives == 0 || positives == videos.len() {
        return Err(Error::SingleClass);
    }
    Ok(SyntheticDataset {
        config: config.clone(),
        videos,
        embeddings,
    })
}

impl SyntheticDataset {
    /// Runs the feature extractors over the raw artifacts.
    pub fn to_video_data(&self, mfcc: &MfccConfig) -> Result<Vec<VideoData>> {
        self.videos
            .iter()
            .map(|v| {
                let clips = crate::expression::segment_clips(&v.video_id, &v.motion, self.config.fps, self.config.clip_seconds)?;
                clip_labels_for(&v.video_id, Some(&v.clip_labels), clips.clip_count(), false)?;
                Ok(VideoData {
                    video_id: v.video_id.clone(),
                    identity_id: v.identity_id.clone(),
                    label: v.label,
                    motion: Some(v.motion.clone()),
                    audio: Some(extract_mfcc(&v.audio, mfcc)?),
                    transcript: Some(embed_transcript(&self.embeddings, &tokenize(&v.transcript))?.bag),
                    clip_labels: Some(v.clip_labels.clone()),
                })
            })
            .collect()
    }

    /// Writes a manifest, per-video artifacts and the embedding table under
    /// `dir`. Motion files hold the frame index in column 0 followed by the
    /// descriptor columns. Paths in the manifest are relative to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        for sub in ["motion", "audio", "transcripts"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut records = Vec::new();
        for v in &self.videos {
            let motion_path = Path::new("motion").join(format!("{}.txt", v.video_id));
            let audio_path = Path::new("audio").join(format!("{}.wav", v.video_id));
            let transcript_path = Path::new("transcripts").join(format!("{}.txt", v.video_id));

            let mut text = String::new();
            let stamps = v.motion.timestamps().expect("synthetic motion has frames");
            for (row, frame) in v.motion.rows().zip(stamps) {
                text.push_str(&frame.to_string());
                for x in row {
                    text.push(' ');
                    text.push_str(&format!("{x:.6}"));
                }
                text.push('\n');
            }
            let p = dir.join(&motion_path);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            write_wav_i16(dir.join(&audio_path), &v.audio)?;
            let p = dir.join(&transcript_path);
            std::fs::write(&p, &v.transcript).map_err(|e| Error::io(&p, e))?;

            records.push(VideoRecord {
                video_id: v.video_id.clone(),
                identity_id: v.identity_id.clone(),
                label: v.label,
                motion_path,
                audio_path,
                transcript_path,
                clip_expression_labels: Some(v.clip_labels.clone()),
            });
        }
        let mut emb = String::new();
        for token in self.embeddings.tokens() {
            emb.push_str(token);
            for x in self.embeddings.get(token).expect("listed token") {
                emb.push_str(&format!(" {x:.6}"));
            }
            emb.push('\n');
        }
        let p = dir.join("embeddings.txt");
        std::fs::write(&p, emb).map_err(|e| Error::io(&p, e))?;
        let manifest = DatasetManifest::new(records)?;
        write_manifest(dir.join("manifest.jsonl"), &manifest)?;
        Ok(manifest)
    }
}
