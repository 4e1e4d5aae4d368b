use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use deceptio::data::{ColumnRange, DescriptorBlock};
use deceptio::experiment::ExperimentConfig;
use deceptio::fusion::Modality;
use deceptio::mfcc::MfccConfig;
use serde::{Deserialize, Serialize};

use crate::Usage;

/// Declarative pipeline settings, read from TOML. Relative paths are
/// resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Feature cache; `<output_dir>/cache` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub motion: MotionSettings,
    #[serde(default)]
    pub audio: MfccConfig,
    pub transcript: TranscriptSettings,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSettings {
    /// Named column block of a dense-trajectory file.
    pub block: DescriptorBlock,
    /// Explicit inclusive column range; overrides `block`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<ColumnRange>,
    pub frame_column: usize,
}

impl Default for MotionSettings {
    fn default() -> Self {
        MotionSettings {
            block: DescriptorBlock::Mbh,
            columns: None,
            frame_column: deceptio::data::idt_layout::FRAME_COLUMN,
        }
    }
}

impl MotionSettings {
    pub fn column_range(&self) -> ColumnRange {
        self.columns.unwrap_or_else(|| self.block.columns())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptSettings {
    pub embeddings: PathBuf,
    /// Read only the first N embedding lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_limit: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        if config.cache_dir.is_none() {
            config.cache_dir = Some(config.output_dir.join("cache"));
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.output_dir,
            &mut self.transcript.embeddings,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.cache_dir.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
    }

    /// Settings and path checks that do not read any data.
    pub fn validate(&self) -> Result<()> {
        self.experiment
            .validate()
            .map_err(|e| Usage(e.to_string()))?;
        let cols = self.motion.column_range();
        if cols.end < cols.start {
            return Err(Usage(format!("motion column range {}..={} is empty", cols.start, cols.end)).into());
        }
        if self.workers == Some(0) {
            return Err(Usage("workers must be at least 1".into()).into());
        }
        if !self.manifest.is_file() {
            return Err(Usage(format!("manifest {} does not exist", self.manifest.display())).into());
        }
        if self.uses(Modality::Transcript) && !self.transcript.embeddings.is_file() {
            return Err(Usage(format!(
                "embedding file {} does not exist",
                self.transcript.embeddings.display()
            ))
            .into());
        }
        Ok(())
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.experiment.modalities.contains(&m)
    }

    /// Motion descriptors feed both the motion and the expression slots.
    pub fn needs_motion(&self) -> bool {
        self.uses(Modality::Motion) || self.uses(Modality::Expression)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }
}

/// Comma-separated list parsed with `FromStr`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| Usage(e.to_string())))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(Usage(format!("empty list {s:?}")).into());
    }
    Ok(items)
}
