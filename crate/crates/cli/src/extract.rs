//! Content-addressed feature cache.
//!
//! Every artifact is stored under a key hashing the input file's bytes
//! together with the settings that shape it, so a changed input or
//! parameter misses the cache and everything else hits.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{anyhow, Context, Result};
use deceptio::data::{
    load_audio, load_trajectory_descriptors_with_frames, DatasetManifest, DescriptorBag, VideoRecord,
};
use deceptio::experiment::VideoData;
use deceptio::expression::{clip_labels_for, segment_clips};
use deceptio::io::{read_bag, write_bag};
use deceptio::mfcc::extract_mfcc;
use deceptio::transcript::{embed_transcript, load_embeddings, load_transcript, tokenize, EmbeddingTable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const CACHE_ENV: &str = "DECEPTIO_CACHE_DIR";

pub fn cache_dir(config: &PipelineConfig) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.cache_dir.clone().unwrap_or_else(|| config.output_dir.join("cache")),
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn key<T: Serialize>(kind: &str, input: &str, settings: &T) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update([0]);
    hasher.update(input.as_bytes());
    hasher.update([0]);
    hasher.update(serde_json::to_vec(settings)?);
    Ok(hex::encode(hasher.finalize()))
}

/// Clip layout of one video, stored next to its motion features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub video_id: String,
    pub fps: f64,
    pub clip_seconds: f64,
    /// `(start_frame, end_frame, rows)` per clip.
    pub clips: Vec<(u32, u32, usize)>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ExtractStats {
    pub videos: usize,
    pub computed: usize,
    pub cache_hits: usize,
}

enum Outcome {
    Hit,
    Computed,
}

struct Cache<'a> {
    dir: &'a Path,
}

impl Cache<'_> {
    fn path(&self, kind: &str, key: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{kind}-{key}.{ext}"))
    }

    fn load_bag(&self, kind: &str, key: &str) -> Result<Option<DescriptorBag>> {
        let p = self.path(kind, key, "bag");
        if !p.is_file() {
            return Ok(None);
        }
        let file = File::open(&p).with_context(|| format!("cannot open {}", p.display()))?;
        let bag = read_bag(BufReader::new(file)).with_context(|| format!("corrupt cache entry {}", p.display()))?;
        Ok(Some(bag))
    }

    fn store(&self, path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let file = File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        std::fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
    }

    fn store_bag(&self, kind: &str, key: &str, bag: &DescriptorBag) -> Result<()> {
        self.store(&self.path(kind, key, "bag"), |w| Ok(write_bag(w, bag)?))
    }
}

/// Cache keys of one video's artifacts.
#[derive(Debug, Clone, Default)]
struct Keys {
    motion: Option<String>,
    segmentation: Option<String>,
    audio: Option<String>,
    transcript: Option<String>,
}

struct Extractor<'a> {
    config: &'a PipelineConfig,
    cache: Cache<'a>,
    embeddings_hash: Option<String>,
    embeddings: OnceLock<std::result::Result<EmbeddingTable, String>>,
}

impl<'a> Extractor<'a> {
    fn new(config: &'a PipelineConfig, dir: &'a Path) -> Result<Self> {
        let embeddings_hash = if config.uses(deceptio::fusion::Modality::Transcript) {
            Some(hash_file(&config.transcript.embeddings)?)
        } else {
            None
        };
        Ok(Extractor {
            config,
            cache: Cache { dir },
            embeddings_hash,
            embeddings: OnceLock::new(),
        })
    }

    fn table(&self) -> Result<&EmbeddingTable> {
        self.embeddings
            .get_or_init(|| {
                load_embeddings(&self.config.transcript.embeddings, self.config.transcript.vocabulary_limit)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| anyhow!("{e}"))
    }

    fn keys(&self, r: &VideoRecord) -> Result<Keys> {
        let c = self.config;
        let mut keys = Keys::default();
        if c.needs_motion() {
            let h = hash_file(&r.motion_path)?;
            let m = key("motion", &h, &(&c.motion.column_range(), c.motion.frame_column))?;
            keys.segmentation = Some(key("clips", &m, &(c.experiment.fps, c.experiment.clip_seconds))?);
            keys.motion = Some(m);
        }
        if c.uses(deceptio::fusion::Modality::Audio) {
            keys.audio = Some(key("audio", &hash_file(&r.audio_path)?, &c.audio)?);
        }
        if let Some(eh) = &self.embeddings_hash {
            let h = hash_file(&r.transcript_path)?;
            keys.transcript = Some(key("transcript", &h, &(eh, c.transcript.vocabulary_limit))?);
        }
        Ok(keys)
    }

    fn extract(&self, r: &VideoRecord) -> Result<(usize, usize)> {
        let keys = self.keys(r)?;
        let mut outcomes = Vec::new();
        if let (Some(mk), Some(sk)) = (&keys.motion, &keys.segmentation) {
            let (bag, o) = match self.cache.load_bag("motion", mk)? {
                Some(b) => (b, Outcome::Hit),
                None => {
                    let cols = self.config.motion.column_range();
                    let b = load_trajectory_descriptors_with_frames(&r.motion_path, cols, self.config.motion.frame_column)?;
                    self.cache.store_bag("motion", mk, &b)?;
                    (b, Outcome::Computed)
                }
            };
            outcomes.push(("motion", o));
            let seg_path = self.cache.path("clips", sk, "json");
            if seg_path.is_file() {
                outcomes.push(("clips", Outcome::Hit));
            } else {
                let e = &self.config.experiment;
                let set = segment_clips(&r.video_id, &bag, e.fps, e.clip_seconds)?;
                if let Some(labels) = r.clip_expression_labels.as_deref() {
                    clip_labels_for(&r.video_id, Some(labels), set.clip_count(), e.broadcast_video_labels)?;
                }
                let seg = Segmentation {
                    video_id: r.video_id.clone(),
                    fps: e.fps,
                    clip_seconds: e.clip_seconds,
                    clips: set
                        .clips
                        .iter()
                        .map(|c| (c.start_frame, c.end_frame, c.bag.as_ref().map_or(0, DescriptorBag::len)))
                        .collect(),
                };
                self.cache.store(&seg_path, |w| Ok(serde_json::to_writer_pretty(w, &seg)?))?;
                outcomes.push(("clips", Outcome::Computed));
            }
        }
        if let Some(k) = &keys.audio {
            if self.cache.load_bag("audio", k)?.is_some() {
                outcomes.push(("audio", Outcome::Hit));
            } else {
                let signal = load_audio(&r.audio_path)?;
                let bag = extract_mfcc(&signal, &self.config.audio)?;
                self.cache.store_bag("audio", k, &bag)?;
                outcomes.push(("audio", Outcome::Computed));
            }
        }
        if let Some(k) = &keys.transcript {
            if self.cache.load_bag("transcript", k)?.is_some() {
                outcomes.push(("transcript", Outcome::Hit));
            } else {
                let text = load_transcript(&r.transcript_path)?;
                let embedded = embed_transcript(self.table()?, &tokenize(&text))?;
                if embedded.oov_count > 0 {
                    log::info!("{}: {} out-of-vocabulary tokens", r.video_id, embedded.oov_count);
                }
                self.cache.store_bag("transcript", k, &embedded.bag)?;
                outcomes.push(("transcript", Outcome::Computed));
            }
        }
        let mut counts = (0, 0);
        for (kind, o) in outcomes {
            match o {
                Outcome::Hit => {
                    log::info!("{}: {kind} cache hit", r.video_id);
                    counts.1 += 1;
                }
                Outcome::Computed => {
                    log::info!("{}: {kind} computed", r.video_id);
                    counts.0 += 1;
                }
            }
        }
        Ok(counts)
    }

    fn load(&self, r: &VideoRecord) -> Result<VideoData> {
        let keys = self.keys(r)?;
        let fetch = |kind: &str, k: &Option<String>| -> Result<Option<DescriptorBag>> {
            let Some(k) = k else { return Ok(None) };
            match self.cache.load_bag(kind, k)? {
                Some(b) => Ok(Some(b)),
                None => Err(anyhow!("{kind} features not extracted; run `deceptio extract` first")),
            }
        };
        Ok(VideoData {
            video_id: r.video_id.clone(),
            identity_id: r.identity_id.clone(),
            label: r.label,
            motion: fetch("motion", &keys.motion)?,
            audio: fetch("audio", &keys.audio)?,
            transcript: fetch("transcript", &keys.transcript)?,
            clip_labels: r.clip_expression_labels.clone(),
        })
    }
}

pub fn extract_all(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<ExtractStats> {
    let dir = cache_dir(config);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create cache {}", dir.display()))?;
    let ex = Extractor::new(config, &dir)?;
    let counts = manifest
        .records
        .par_iter()
        .map(|r| ex.extract(r).with_context(|| format!("video {}", r.video_id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractStats {
        videos: counts.len(),
        computed: counts.iter().map(|c| c.0).sum(),
        cache_hits: counts.iter().map(|c| c.1).sum(),
    })
}

/// Reads every video's cached artifacts.
pub fn load_all(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<Vec<VideoData>> {
    let dir = cache_dir(config);
    let ex = Extractor::new(config, &dir)?;
    manifest
        .records
        .par_iter()
        .map(|r| ex.load(r).with_context(|| format!("video {}", r.video_id)))
        .collect()
}
