use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate video_id {video_id:?} (first seen on line {first_line})")]
    DuplicateVideo {
        path: PathBuf,
        line: usize,
        first_line: usize,
        video_id: String,
    },

    #[error("{path}:{line}: column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    Ragged {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {needed} samples, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("fisher vector is already normalized")]
    AlreadyNormalized,

    #[error("transcript has no in-vocabulary tokens ({oov} out-of-vocabulary)")]
    NoVocabulary { oov: usize },

    #[error("leakage in fold {fold}: {object} was fit on test identities {identities:?}")]
    Leakage {
        fold: usize,
        object: String,
        identities: Vec<String>,
    },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
