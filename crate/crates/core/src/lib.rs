//! Multimodal deception detection toolkit.
//!
//! Per-modality local features (dense-trajectory descriptors, MFCC frames,
//! word vectors) are pooled into GMM dictionaries and encoded as Fisher
//! Vectors. Motion Fisher Vectors of short clips feed five micro-expression
//! detectors whose pooled scores form a high-level feature. Four per-modality
//! classifiers are combined by convex late fusion and evaluated with
//! identity-grouped cross-validation under average precision.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod experiment;
pub mod expression;
pub mod fisher;
pub mod folds;
pub mod fusion;
pub mod gmm;
pub mod io;
pub mod metrics;
pub mod mfcc;
pub mod provenance;
pub mod report;
pub mod synthetic;
pub mod transcript;

pub use error::{Error, Result};
