//! Binary classifiers behind one train/score interface.
//!
//! Scores are oriented so that larger means more likely positive. SVMs and
//! Adaboost return margins, logistic regression and trees return
//! positive-class probabilities, the random forest returns its vote fraction
//! and Naive Bayes returns the posterior log-odds.

mod adaboost;
mod forest;
mod kernel_svm;
mod linear_svm;
mod logistic;
mod naive_bayes;
mod tree;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adaboost::Adaboost;
pub use forest::RandomForest;
pub use kernel_svm::{KernelSvm, PolynomialKernel};
pub use linear_svm::{primal_objective, solve_dual_cd, LinearSvm};
pub use logistic::LogisticRegression;
pub(crate) use logistic::lbfgs;
pub use naive_bayes::GaussianNaiveBayes;
pub use tree::{DecisionTree, TreeOptions};

/// Dense row-major `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.iter_rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        FeatureMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

/// Per-feature zero-mean, unit-variance scaling fit on training rows.
/// Constant features are centered and left unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.iter_rows() {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut data = Vec::with_capacity(x.rows() * x.cols());
        for r in x.iter_rows() {
            data.extend(self.apply(r));
        }
        FeatureMatrix {
            rows: x.rows(),
            cols: x.cols(),
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    LinearSvm,
    KernelSvm,
    NaiveBayes,
    DecisionTree,
    RandomForest,
    LogisticRegression,
    Adaboost,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::LinearSvm,
        ClassifierKind::KernelSvm,
        ClassifierKind::NaiveBayes,
        ClassifierKind::DecisionTree,
        ClassifierKind::RandomForest,
        ClassifierKind::LogisticRegression,
        ClassifierKind::Adaboost,
    ];

    /// Column heading used in result tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::LinearSvm => "L-SVM",
            ClassifierKind::KernelSvm => "K-SVM",
            ClassifierKind::NaiveBayes => "NB",
            ClassifierKind::DecisionTree => "DT",
            ClassifierKind::RandomForest => "RF",
            ClassifierKind::LogisticRegression => "LR",
            ClassifierKind::Adaboost => "Adaboost",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ClassifierKind::LinearSvm => "linear-svm",
            ClassifierKind::KernelSvm => "kernel-svm",
            ClassifierKind::NaiveBayes => "naive-bayes",
            ClassifierKind::DecisionTree => "decision-tree",
            ClassifierKind::RandomForest => "random-forest",
            ClassifierKind::LogisticRegression => "logistic-regression",
            ClassifierKind::Adaboost => "adaboost",
        }
    }
}

/// Classifier kind plus its hyperparameters. Fields irrelevant to the kind
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// SVM box constraint.
    pub c: f64,
    /// Candidate `c` values for the linear SVM, chosen by inner validation.
    /// Empty means always use `c`.
    pub c_grid: Vec<f64>,
    pub degree: u32,
    pub tree_count: usize,
    /// Depth limit for the decision tree (`None` = unlimited).
    pub max_depth: Option<usize>,
    pub weak_learner_depth: usize,
    pub boosting_rounds: usize,
    /// L2 penalty for logistic regression.
    pub regularization: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::new(ClassifierKind::LinearSvm)
    }
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind) -> Self {
        ClassifierSpec {
            kind,
            c: 1.0,
            c_grid: if kind == ClassifierKind::LinearSvm {
                vec![0.01, 0.1, 1.0, 10.0]
            } else {
                Vec::new()
            },
            degree: 3,
            tree_count: 50,
            max_depth: None,
            weak_learner_depth: 2,
            boosting_rounds: 100,
            regularization: 1.0,
            tolerance: 1e-4,
            max_iterations: 10_000,
            seed: 0,
        }
    }

    pub fn default_suite() -> Vec<ClassifierSpec> {
        ClassifierKind::ALL.iter().map(|&k| ClassifierSpec::new(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("{}: {m}", self.kind.slug())));
        match self.kind {
            ClassifierKind::LinearSvm | ClassifierKind::KernelSvm
                if !(self.c > 0.0) || self.c_grid.iter().any(|c| !(*c > 0.0)) =>
            {
                bad("C must be positive")
            }
            ClassifierKind::KernelSvm if self.degree == 0 => bad("degree must be >= 1"),
            ClassifierKind::RandomForest if self.tree_count == 0 => bad("tree_count must be >= 1"),
            ClassifierKind::Adaboost if self.boosting_rounds == 0 || self.weak_learner_depth == 0 => {
                bad("boosting needs >= 1 round of depth >= 1 learners")
            }
            ClassifierKind::LogisticRegression if !(self.regularization > 0.0) => {
                bad("regularization must be positive")
            }
            _ if !(self.tolerance > 0.0) || self.max_iterations == 0 => {
                bad("tolerance and max_iterations must be positive")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum ModelPayload {
    LinearSvm(LinearSvm),
    KernelSvm(KernelSvm),
    NaiveBayes(GaussianNaiveBayes),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    LogisticRegression(LogisticRegression),
    Adaboost(Adaboost),
}

const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub dim: usize,
    #[serde(flatten)]
    pub payload: ModelPayload,
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        match &self.payload {
            ModelPayload::LinearSvm(_) => ClassifierKind::LinearSvm,
            ModelPayload::KernelSvm(_) => ClassifierKind::KernelSvm,
            ModelPayload::NaiveBayes(_) => ClassifierKind::NaiveBayes,
            ModelPayload::DecisionTree(_) => ClassifierKind::DecisionTree,
            ModelPayload::RandomForest(_) => ClassifierKind::RandomForest,
            ModelPayload::LogisticRegression(_) => ClassifierKind::LogisticRegression,
            ModelPayload::Adaboost(_) => ClassifierKind::Adaboost,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }

    /// Features retained by Naive Bayes after dropping constant columns.
    pub fn feature_mask(&self) -> Option<&[usize]> {
        match &self.payload {
            ModelPayload::NaiveBayes(nb) => Some(&nb.feature_mask),
            _ => None,
        }
    }
}

fn check_training_data(features: &FeatureMatrix, labels: &[bool]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: labels.len(),
        });
    }
    if features.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: features.rows(),
        });
    }
    if features.cols() == 0 {
        return Err(Error::InvalidConfig("feature matrix has no columns".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    Ok(())
}

/// Trains a classifier; `labels[i]` is true for the positive class.
pub fn train(spec: &ClassifierSpec, features: &FeatureMatrix, labels: &[bool]) -> Result<TrainedModel> {
    spec.validate()?;
    check_training_data(features, labels)?;
    let payload = match spec.kind {
        ClassifierKind::LinearSvm => ModelPayload::LinearSvm(LinearSvm::train(features, labels, spec)),
        ClassifierKind::KernelSvm => ModelPayload::KernelSvm(KernelSvm::train(features, labels, spec)),
        ClassifierKind::NaiveBayes => {
            ModelPayload::NaiveBayes(GaussianNaiveBayes::train(features, labels))
        }
        ClassifierKind::DecisionTree => {
            let options = TreeOptions {
                max_depth: spec.max_depth,
                ..TreeOptions::default()
            };
            let weights = vec![1.0; labels.len()];
            ModelPayload::DecisionTree(DecisionTree::train(features, labels, &weights, &options, None))
        }
        ClassifierKind::RandomForest => {
            ModelPayload::RandomForest(RandomForest::train(features, labels, spec))
        }
        ClassifierKind::LogisticRegression => {
            ModelPayload::LogisticRegression(LogisticRegression::train(features, labels, spec))
        }
        ClassifierKind::Adaboost => ModelPayload::Adaboost(Adaboost::train(features, labels, spec)),
    };
    Ok(TrainedModel {
        version: MODEL_VERSION,
        dim: features.cols(),
        payload,
    })
}

pub fn predict_score(model: &TrainedModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scoring input".into()));
    }
    Ok(match &model.payload {
        ModelPayload::LinearSvm(m) => m.decision(x),
        ModelPayload::KernelSvm(m) => m.decision(x),
        ModelPayload::NaiveBayes(m) => m.log_odds(x),
        ModelPayload::DecisionTree(m) => m.predict(x),
        ModelPayload::RandomForest(m) => m.vote_fraction(x),
        ModelPayload::LogisticRegression(m) => m.probability(x),
        ModelPayload::Adaboost(m) => m.margin(x),
    })
}

pub fn predict_scores(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    x.iter_rows().map(|r| predict_score(model, r)).collect()
}
