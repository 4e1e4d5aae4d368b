//! Identity-grouped cross-validated evaluation of per-modality classifiers
//! and their late fusion.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ClassifierKind, ClassifierSpec, FeatureMatrix};
use crate::data::{DescriptorBag, Label};
use crate::expression::{
    self, clip_labels_for, ground_truth_features, segment_clips, select_expressions, DetectorOptions,
    DetectorSet, Expression, ExpressionBits, ExpressionScores, EXPRESSION_COUNT,
};
use crate::fisher::{encode_fisher, normalize_fv, Pca};
use crate::folds::{fold_balance, grouped_kfold_identities, FoldBalance, FoldSplit};
use crate::fusion::{fuse, search_weights, FusionWeights, Modality, ModalityScores, ScoreStandardizer, MODALITY_COUNT};
use crate::gmm::{fit_gmm, EmConfig, GaussianMixture};
use crate::metrics::auc_pr;
use crate::provenance::{check_leakage, LearnedObject, Provenance};
use crate::{Error, Result};

/// Extracted local features for one video. Modalities that are not part of
/// the experiment may be left out.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub video_id: String,
    pub identity_id: String,
    pub label: Label,
    /// Motion descriptors with frame indices.
    pub motion: Option<DescriptorBag>,
    /// MFCC frames.
    pub audio: Option<DescriptorBag>,
    /// Word vectors.
    pub transcript: Option<DescriptorBag>,
    pub clip_labels: Option<Vec<ExpressionBits>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpressionSource {
    /// Pooled detector scores.
    #[default]
    Predicted,
    /// Per-video fraction of annotated clips.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucAggregation {
    /// One AUC over the out-of-fold scores of all folds.
    #[default]
    Pooled,
    /// Mean of per-fold AUCs.
    FoldMean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentCounts {
    pub motion: usize,
    pub audio: usize,
    pub transcript: usize,
}

impl Default for ComponentCounts {
    fn default() -> Self {
        ComponentCounts {
            motion: 64,
            audio: 64,
            transcript: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub folds: usize,
    /// Identity-grouped folds inside each training split, used for fusion
    /// weights, hyperparameter choice and cross-fitted expression features.
    pub inner_folds: usize,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub expressions: ExpressionSource,
    pub expression_subset: Vec<Expression>,
    /// Copy a single video-level annotation to every clip.
    pub broadcast_video_labels: bool,
    pub detector: DetectorOptions,
    pub components: ComponentCounts,
    pub em: EmConfig,
    /// Cap on descriptor rows pooled for each dictionary fit.
    pub gmm_max_samples: Option<usize>,
    /// Power + L2 normalization of every Fisher Vector.
    pub fv_power: Option<f64>,
    /// PCA dimension for motion descriptors before encoding.
    pub motion_pca: Option<usize>,
    pub fps: f64,
    pub clip_seconds: f64,
    pub classifiers: Vec<ClassifierSpec>,
    pub fusion_step: f64,
    pub aggregation: AucAggregation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 10,
            inner_folds: 3,
            seed: 0,
            modalities: Modality::ALL.to_vec(),
            expressions: ExpressionSource::Predicted,
            expression_subset: Expression::ALL.to_vec(),
            broadcast_video_labels: false,
            detector: DetectorOptions::default(),
            components: ComponentCounts::default(),
            em: EmConfig::default(),
            gmm_max_samples: Some(100_000),
            fv_power: None,
            motion_pca: None,
            fps: 15.0,
            clip_seconds: 4.0,
            classifiers: ClassifierSpec::default_suite(),
            fusion_step: 0.05,
            aggregation: AucAggregation::Pooled,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.modalities.is_empty() {
            return bad("modality subset is empty".into());
        }
        if self.expression_subset.is_empty() {
            return bad("expression subset is empty".into());
        }
        if self.classifiers.is_empty() {
            return bad("no classifiers configured".into());
        }
        if self.inner_folds < 2 {
            return bad(format!("inner_folds must be at least 2, got {}", self.inner_folds));
        }
        let c = &self.components;
        if c.motion == 0 || c.audio == 0 || c.transcript == 0 {
            return bad("GMM component counts must be positive".into());
        }
        if let Some(a) = self.fv_power {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("fv_power {a} is outside (0, 1]"));
            }
        }
        if self.motion_pca == Some(0) {
            return bad("motion_pca must be positive".into());
        }
        expression::window_frames(self.fps, self.clip_seconds)?;
        crate::fusion::simplex_grid(self.fusion_step, &[true; MODALITY_COUNT])?;
        for spec in &self.classifiers {
            spec.validate()?;
        }
        Ok(())
    }
}

/// A named set of fused modalities, one row of the result grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub name: String,
    pub modalities: Vec<Modality>,
}

/// Result-grid rows for the expression source, restricted to rows whose
/// modalities are all enabled.
pub fn feature_rows(source: ExpressionSource, enabled: &[Modality]) -> Vec<FeatureRow> {
    use Modality::*;
    let rows: Vec<(&str, Vec<Modality>)> = match source {
        ExpressionSource::Predicted => vec![
            ("IDT", vec![Motion]),
            ("MicroExpression", vec![Expression]),
            ("Transcript", vec![Transcript]),
            ("MFCC", vec![Audio]),
            ("IDT+MicroExpression", vec![Motion, Expression]),
            ("IDT+MicroExpression+Transcripts", vec![Motion, Transcript, Expression]),
            ("IDT+MicroExpression+MFCC", vec![Motion, Audio, Expression]),
            ("All Modalities", vec![Motion, Transcript, Audio, Expression]),
        ],
        ExpressionSource::GroundTruth => vec![
            ("GTMicroExpression", vec![Expression]),
            ("GTMicroExpression+IDT", vec![Motion, Expression]),
            ("GTMicroExpression+IDT+Transcript", vec![Motion, Transcript, Expression]),
            ("GTMicroExpression+IDT+MFCC", vec![Motion, Audio, Expression]),
            ("GTMicroExpression+All Modalities", vec![Motion, Transcript, Audio, Expression]),
        ],
    };
    rows.into_iter()
        .filter(|(_, ms)| ms.iter().all(|m| enabled.contains(m)))
        .map(|(name, modalities)| FeatureRow {
            name: name.to_string(),
            modalities,
        })
        .collect()
}

/// Learned fusion for one (row, classifier) cell of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub weights: FusionWeights,
    /// AUC of the fused inner out-of-fold scores.
    pub inner_auc: f64,
}

/// Everything one outer fold produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutput {
    pub fold: usize,
    pub test: Vec<usize>,
    pub balance: FoldBalance,
    /// `[classifier][test video]` standardized per-modality test scores;
    /// modalities not in the experiment are `None`.
    pub modality_scores: Vec<Vec<[Option<f64>; MODALITY_COUNT]>>,
    /// `[row][classifier][test video]` fused scores.
    pub fused: Vec<Vec<Vec<f64>>>,
    /// `[row][classifier]`
    pub cells: Vec<Vec<CellFit>>,
    /// `[classifier]` box constraint chosen per modality by inner validation.
    pub selected_c: Vec<BTreeMap<Modality, f64>>,
    /// Detector scores and annotations of the test clips.
    pub detector_clips: Vec<(ExpressionScores, ExpressionBits)>,
    pub warnings: Vec<String>,
    /// Learned objects verified against the test identities.
    pub audited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<FeatureRow>,
    pub classifiers: Vec<ClassifierSpec>,
    pub modalities: Vec<Modality>,
    pub folds: Vec<FoldOutput>,
}

impl ExperimentResult {
    fn pooled(&self, row: usize, clf: usize, data: &[bool]) -> Option<f64> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for f in &self.folds {
            scores.extend_from_slice(&f.fused[row][clf]);
            labels.extend(f.test.iter().map(|&i| data[i]));
        }
        auc_pr(&scores, &labels).ok()
    }

    fn fold_mean(&self, row: usize, clf: usize, data: &[bool]) -> Option<f64> {
        let per_fold: Vec<f64> = self
            .folds
            .iter()
            .filter_map(|f| {
                let labels: Vec<bool> = f.test.iter().map(|&i| data[i]).collect();
                auc_pr(&f.fused[row][clf], &labels).ok()
            })
            .collect();
        (!per_fold.is_empty()).then(|| per_fold.iter().sum::<f64>() / per_fold.len() as f64)
    }

    /// `[row][classifier]` AUC-PR under the chosen aggregation; `None` when
    /// undefined.
    pub fn grid(&self, labels: &[bool], aggregation: AucAggregation) -> Vec<Vec<Option<f64>>> {
        (0..self.rows.len())
            .map(|r| {
                (0..self.classifiers.len())
                    .map(|c| match aggregation {
                        AucAggregation::Pooled => self.pooled(r, c, labels),
                        AucAggregation::FoldMean => self.fold_mean(r, c, labels),
                    })
                    .collect()
            })
            .collect()
    }

    /// Clip-level AUC-PR of each detector over all test clips.
    pub fn detector_auc(&self) -> Vec<(Expression, Option<f64>)> {
        let clips: Vec<&(ExpressionScores, ExpressionBits)> =
            self.folds.iter().flat_map(|f| f.detector_clips.iter()).collect();
        Expression::ALL
            .iter()
            .map(|&e| {
                let s: Vec<f64> = clips.iter().map(|c| c.0[e.index()]).collect();
                let y: Vec<bool> = clips.iter().map(|c| c.1.get(e)).collect();
                (e, auc_pr(&s, &y).ok())
            })
            .collect()
    }

    pub fn row_index(&self, name: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.name == name)
    }

    pub fn classifier_index(&self, kind: ClassifierKind) -> Option<usize> {
        self.classifiers.iter().position(|c| c.kind == kind)
    }
}

/// Runs the experiment on identity-grouped folds drawn from `config.seed`.
pub fn run_experiment(data: &[VideoData], config: &ExperimentConfig) -> Result<ExperimentResult> {
    let identities: Vec<&str> = data.iter().map(|v| v.identity_id.as_str()).collect();
    let plan = grouped_kfold_identities(&identities, config.folds, config.seed)?;
    let splits = plan.splits_for(&identities)?;
    run_experiment_with_splits(data, config, &splits)
}

/// Runs the experiment on explicit splits. Any learned object that saw a
/// test identity aborts the run with [`Error::Leakage`].
pub fn run_experiment_with_splits(
    data: &[VideoData],
    config: &ExperimentConfig,
    splits: &[FoldSplit],
) -> Result<ExperimentResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("experiment has no videos".into()));
    }
    let rows = feature_rows(config.expressions, &config.modalities);
    if rows.is_empty() {
        return Err(Error::InvalidConfig(
            "the enabled modalities do not form any result row".into(),
        ));
    }
    let mut needed: BTreeSet<Modality> = rows.iter().flat_map(|r| r.modalities.iter().copied()).collect();
    needed.retain(|m| config.modalities.contains(m));
    check_inputs(data, &needed, config)?;

    let folds = splits
        .par_iter()
        .map(|split| run_fold(data, split, &rows, &needed, config))
        .collect::<Vec<Result<FoldOutput>>>()
        .into_iter()
        .collect::<Result<Vec<FoldOutput>>>()?;
    Ok(ExperimentResult {
        rows,
        classifiers: config.classifiers.clone(),
        modalities: needed.into_iter().collect(),
        folds,
    })
}

fn check_inputs(data: &[VideoData], needed: &BTreeSet<Modality>, config: &ExperimentConfig) -> Result<()> {
    let mut ids = BTreeSet::new();
    for v in data {
        if !ids.insert(v.video_id.as_str()) {
            return Err(Error::Format(format!("duplicate video {:?}", v.video_id)));
        }
        let missing = |what: &str| Error::Format(format!("video {}: {what} features are missing", v.video_id));
        let predicted = config.expressions == ExpressionSource::Predicted;
        if (needed.contains(&Modality::Motion) || (needed.contains(&Modality::Expression) && predicted))
            && v.motion.is_none()
        {
            return Err(missing("motion"));
        }
        if needed.contains(&Modality::Audio) && v.audio.is_none() {
            return Err(missing("audio"));
        }
        if needed.contains(&Modality::Transcript) && v.transcript.is_none() {
            return Err(missing("transcript"));
        }
        if needed.contains(&Modality::Expression) && v.clip_labels.as_ref().is_none_or(Vec::is_empty) {
            return Err(Error::Format(format!(
                "video {}: no micro-expression annotations",
                v.video_id
            )));
        }
    }
    Ok(())
}

/// Deterministic per-purpose seeds.
fn derive_seed(seed: u64, fold: usize, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (fold as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ purpose.wrapping_mul(0x94D0_49BB_1331_11EB)
}

struct FoldContext<'a> {
    data: &'a [VideoData],
    fold: usize,
    train: &'a [usize],
    test: &'a [usize],
    config: &'a ExperimentConfig,
    objects: Vec<LearnedObject>,
}

impl FoldContext<'_> {
    fn provenance(&self, indices: &[usize]) -> Provenance {
        Provenance::from_pairs(
            indices
                .iter()
                .map(|&i| (self.data[i].video_id.as_str(), self.data[i].identity_id.as_str())),
        )
    }

    fn record(&mut self, name: String, indices: &[usize]) {
        let provenance = self.provenance(indices);
        self.objects.push(LearnedObject { name, provenance });
    }
}

/// Pools training rows (capped) and fits a dictionary.
fn fit_dictionary(bags: &[&DescriptorBag], k: usize, config: &ExperimentConfig, seed: u64) -> Result<GaussianMixture> {
    let pooled = DescriptorBag::concat(bags.iter().copied())?;
    let pooled = match config.gmm_max_samples {
        Some(cap) if pooled.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = sample(&mut rng, pooled.len(), cap).into_vec();
            rows.sort_unstable();
            pooled.select(&rows)?
        }
        _ => pooled,
    };
    let em = EmConfig {
        seed,
        ..config.em.clone()
    };
    fit_gmm(&pooled, k, &em)
}

fn encode(gmm: &GaussianMixture, bag: &DescriptorBag, power: Option<f64>) -> Result<Vec<f64>> {
    let fv = encode_fisher(gmm, bag)?;
    Ok(match power {
        Some(a) => normalize_fv(&fv, a)?.values,
        None => fv.values,
    })
}

fn run_fold(
    data: &[VideoData],
    split: &FoldSplit,
    rows: &[FeatureRow],
    needed: &BTreeSet<Modality>,
    config: &ExperimentConfig,
) -> Result<FoldOutput> {
    let mut ctx = FoldContext {
        data,
        fold: split.fold,
        train: &split.train,
        test: &split.test,
        config,
        objects: Vec::new(),
    };
    let labels: Vec<bool> = data.iter().map(|v| v.label.is_positive()).collect();
    let train_labels: Vec<bool> = ctx.train.iter().map(|&i| labels[i]).collect();
    if train_labels.iter().all(|&l| l) || train_labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let test_prov = ctx.provenance(ctx.test);

    // Inner folds over the training identities, as positions into `train`.
    let train_ids: Vec<&str> = ctx.train.iter().map(|&i| data[i].identity_id.as_str()).collect();
    let inner_plan = grouped_kfold_identities(&train_ids, config.inner_folds, derive_seed(config.seed, split.fold, 1))?;
    let inner = inner_plan.splits_for(&train_ids)?;

    let mut warnings = Vec::new();
    let mut features: BTreeMap<Modality, (FeatureMatrix, FeatureMatrix)> = BTreeMap::new();

    let predicted = config.expressions == ExpressionSource::Predicted;
    let wants_motion = needed.contains(&Modality::Motion);
    let wants_expr = needed.contains(&Modality::Expression);

    let mut motion_encoder = None;
    if wants_motion || (wants_expr && predicted) {
        let train_bags: Vec<&DescriptorBag> = ctx.train.iter().map(|&i| data[i].motion.as_ref().unwrap()).collect();
        let pca = match config.motion_pca {
            Some(d) => {
                let pooled = DescriptorBag::concat(train_bags.iter().copied())?;
                ctx.record("pca/motion".into(), ctx.train);
                Some(Pca::fit(&pooled, d)?)
            }
            None => None,
        };
        let projected: Vec<DescriptorBag> = match &pca {
            Some(p) => train_bags.iter().map(|b| p.transform(b)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let refs: Vec<&DescriptorBag> = if pca.is_some() { projected.iter().collect() } else { train_bags };
        let gmm = fit_dictionary(&refs, config.components.motion, config, derive_seed(config.seed, split.fold, 2))?;
        ctx.record("gmm/motion".into(), ctx.train);
        motion_encoder = Some((gmm, pca));
    }
    let encode_motion = |bag: &DescriptorBag| -> Result<Vec<f64>> {
        let (gmm, pca) = motion_encoder.as_ref().expect("motion dictionary");
        match pca {
            Some(p) => encode(gmm, &p.transform(bag)?, config.fv_power),
            None => encode(gmm, bag, config.fv_power),
        }
    };

    if wants_motion {
        let enc = |idx: &[usize]| -> Result<FeatureMatrix> {
            let rows = idx
                .par_iter()
                .map(|&i| encode_motion(data[i].motion.as_ref().unwrap()))
                .collect::<Result<Vec<_>>>()?;
            FeatureMatrix::from_rows(&rows)
        };
        features.insert(Modality::Motion, (enc(ctx.train)?, enc(ctx.test)?));
    }

    for (m, k, purpose) in [
        (Modality::Audio, config.components.audio, 3),
        (Modality::Transcript, config.components.transcript, 4),
    ] {
        if !needed.contains(&m) {
            continue;
        }
        let bag_of = |i: usize| -> &DescriptorBag {
            match m {
                Modality::Audio => data[i].audio.as_ref().unwrap(),
                _ => data[i].transcript.as_ref().unwrap(),
            }
        };
        let train_bags: Vec<&DescriptorBag> = ctx.train.iter().map(|&i| bag_of(i)).collect();
        let gmm = fit_dictionary(&train_bags, k, config, derive_seed(config.seed, split.fold, purpose))?;
        ctx.record(format!("gmm/{m}"), ctx.train);
        let enc = |idx: &[usize]| -> Result<FeatureMatrix> {
            let rows = idx
                .par_iter()
                .map(|&i| encode(&gmm, bag_of(i), config.fv_power))
                .collect::<Result<Vec<_>>>()?;
            FeatureMatrix::from_rows(&rows)
        };
        features.insert(m, (enc(ctx.train)?, enc(ctx.test)?));
    }

    let subset: BTreeSet<Expression> = config.expression_subset.iter().copied().collect();
    let mut detector_clips = Vec::new();
    if wants_expr {
        let (train_x, test_x) = if predicted {
            let out = predicted_expressions(&mut ctx, &inner, &encode_motion, &mut warnings)?;
            detector_clips = out.test_clips;
            (out.train, out.test)
        } else {
            let gt = |i: usize| ground_truth_features(data[i].clip_labels.as_deref().unwrap_or_default());
            (
                ctx.train.iter().map(|&i| gt(i)).collect::<Vec<_>>(),
                ctx.test.iter().map(|&i| gt(i)).collect::<Vec<_>>(),
            )
        };
        let to_matrix = |rows: &[ExpressionScores]| {
            let selected: Vec<Vec<f64>> = rows.iter().map(|s| select_expressions(s, &subset)).collect();
            FeatureMatrix::from_rows(&selected)
        };
        features.insert(Modality::Expression, (to_matrix(&train_x)?, to_matrix(&test_x)?));
    }

    let n_train = ctx.train.len();
    let n_test = ctx.test.len();
    let mut modality_scores = Vec::with_capacity(config.classifiers.len());
    let mut inner_scores_all = Vec::with_capacity(config.classifiers.len());
    let mut selected_c = Vec::with_capacity(config.classifiers.len());
    for (ci, spec) in config.classifiers.iter().enumerate() {
        let mut inner_scores = vec![[0.0; MODALITY_COUNT]; n_train];
        let mut test_scores = vec![[0.0; MODALITY_COUNT]; n_test];
        let mut chosen = BTreeMap::new();
        for (&m, (train_x, test_x)) in &features {
            let mut spec = spec.clone();
            spec.seed = derive_seed(spec.seed ^ config.seed, split.fold, 100 + ci as u64);
            let candidates: Vec<f64> = if spec.kind == ClassifierKind::LinearSvm && !spec.c_grid.is_empty() {
                spec.c_grid.clone()
            } else {
                vec![spec.c]
            };
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            for &c in &candidates {
                let mut s = spec.clone();
                s.c = c;
                let oof = out_of_fold(&s, train_x, &train_labels, &inner, &mut ctx, &format!("{}/{m}/c={c}", spec.kind.slug()))?;
                let auc = auc_pr(&oof, &train_labels).unwrap_or(0.0);
                if best.as_ref().is_none_or(|b| auc > b.0) {
                    best = Some((auc, c, oof));
                }
            }
            let (_, c, oof) = best.expect("at least one candidate");
            spec.c = c;
            if spec.kind == ClassifierKind::LinearSvm || spec.kind == ClassifierKind::KernelSvm {
                chosen.insert(m, c);
            }
            let model = classifiers::train(&spec, train_x, &train_labels)?;
            ctx.record(format!("classifier/{}/{m}", spec.kind.slug()), ctx.train);
            let scores = classifiers::predict_scores(&model, test_x)?;
            for (row, s) in inner_scores.iter_mut().zip(oof) {
                row[m.index()] = s;
            }
            for (row, s) in test_scores.iter_mut().zip(scores) {
                row[m.index()] = s;
            }
        }
        modality_scores.push(test_scores);
        inner_scores_all.push(inner_scores);
        selected_c.push(chosen);
    }

    let mut fused = Vec::with_capacity(rows.len());
    let mut cells = Vec::with_capacity(rows.len());
    // Scores are standardized per modality on the inner out-of-fold scores.
    let mut inner_std = Vec::with_capacity(config.classifiers.len());
    let mut standardized_test = Vec::with_capacity(config.classifiers.len());
    for (inner_scores, test_scores) in inner_scores_all.iter().zip(&modality_scores) {
        let st = ScoreStandardizer::fit(inner_scores);
        inner_std.push(inner_scores.iter().map(|s| st.apply(s)).collect::<Vec<ModalityScores>>());
        standardized_test.push(test_scores.iter().map(|s| st.apply(s)).collect::<Vec<ModalityScores>>());
    }
    for row in rows {
        let mut active = [false; MODALITY_COUNT];
        for m in &row.modalities {
            active[m.index()] = true;
        }
        let mut row_fused = Vec::with_capacity(config.classifiers.len());
        let mut row_cells = Vec::with_capacity(config.classifiers.len());
        for (ci, spec) in config.classifiers.iter().enumerate() {
            let inner_std = &inner_std[ci];
            let search = if row.modalities.len() == 1 {
                let weights = FusionWeights::corner(row.modalities[0]);
                let fused: Vec<f64> = inner_std.iter().map(|s| fuse(s, &weights)).collect();
                CellFit {
                    weights,
                    inner_auc: auc_pr(&fused, &train_labels).unwrap_or(0.0),
                }
            } else {
                let r = search_weights(inner_std, &train_labels, config.fusion_step, &active)?;
                CellFit {
                    weights: r.weights,
                    inner_auc: r.auc,
                }
            };
            ctx.record(format!("fusion/{}/{}", row.name, spec.kind.slug()), ctx.train);
            row_fused.push(standardized_test[ci].iter().map(|s| fuse(s, &search.weights)).collect());
            row_cells.push(search);
        }
        fused.push(row_fused);
        cells.push(row_cells);
    }

    check_leakage(split.fold, &ctx.objects, &test_prov)?;

    let present: [bool; MODALITY_COUNT] = std::array::from_fn(|m| features.contains_key(&Modality::ALL[m]));
    let modality_scores = standardized_test
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|s| std::array::from_fn(|m| present[m].then_some(s[m])))
                .collect()
        })
        .collect();
    let identities: Vec<&str> = data.iter().map(|v| v.identity_id.as_str()).collect();
    Ok(FoldOutput {
        fold: split.fold,
        test: split.test.clone(),
        balance: fold_balance(split, &identities, &labels),
        modality_scores,
        fused,
        cells,
        selected_c,
        detector_clips,
        warnings,
        audited: ctx.objects.into_iter().map(|o| o.name).collect(),
    })
}

/// Inner out-of-fold scores for the training rows. An inner training part
/// holding a single class scores its held-out rows 0.
fn out_of_fold(
    spec: &ClassifierSpec,
    x: &FeatureMatrix,
    labels: &[bool],
    inner: &[FoldSplit],
    ctx: &mut FoldContext<'_>,
    name: &str,
) -> Result<Vec<f64>> {
    let mut oof = vec![0.0; labels.len()];
    for s in inner {
        let y: Vec<bool> = s.train.iter().map(|&i| labels[i]).collect();
        match classifiers::train(spec, &x.select_rows(&s.train), &y) {
            Ok(model) => {
                let scores = classifiers::predict_scores(&model, &x.select_rows(&s.test))?;
                for (&i, v) in s.test.iter().zip(scores) {
                    oof[i] = v;
                }
                let videos: Vec<usize> = s.train.iter().map(|&i| ctx.train[i]).collect();
                ctx.record(format!("inner/{}/{name}", s.fold), &videos);
            }
            Err(Error::SingleClass) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(oof)
}

struct PredictedExpressions {
    train: Vec<ExpressionScores>,
    test: Vec<ExpressionScores>,
    test_clips: Vec<(ExpressionScores, ExpressionBits)>,
}

/// Clip Fisher Vectors and labels of one video; empty windows are skipped.
struct VideoClips {
    fvs: Vec<Vec<f64>>,
    labels: Option<Vec<ExpressionBits>>,
}

/// Expression features from clip detectors. Training videos get
/// cross-fitted scores from detectors that never saw them; test videos are
/// scored by detectors trained on all training clips.
fn predicted_expressions(
    ctx: &mut FoldContext<'_>,
    inner: &[FoldSplit],
    encode_motion: &(dyn Fn(&DescriptorBag) -> Result<Vec<f64>> + Sync),
    warnings: &mut Vec<String>,
) -> Result<PredictedExpressions> {
    let data = ctx.data;
    let config = ctx.config;
    let train_idx = ctx.train;
    let fold = ctx.fold;
    let clips_of = |i: usize, need_labels: bool| -> Result<VideoClips> {
        let v = &data[i];
        let set = segment_clips(&v.video_id, v.motion.as_ref().unwrap(), config.fps, config.clip_seconds)?;
        let labels = match clip_labels_for(
            &v.video_id,
            v.clip_labels.as_deref(),
            set.clip_count(),
            config.broadcast_video_labels,
        ) {
            Ok(l) => Some(l),
            Err(e) if need_labels => return Err(e),
            Err(_) => None,
        };
        let mut fvs = Vec::new();
        let mut kept = Vec::new();
        for (j, clip) in set.clips.iter().enumerate() {
            if let Some(bag) = &clip.bag {
                fvs.push(encode_motion(bag)?);
                if let Some(l) = &labels {
                    kept.push(l[j]);
                }
            }
        }
        Ok(VideoClips {
            fvs,
            labels: labels.map(|_| kept),
        })
    };
    let train_clips = ctx
        .train
        .par_iter()
        .map(|&i| clips_of(i, true))
        .collect::<Result<Vec<_>>>()?;
    let test_clips = ctx
        .test
        .par_iter()
        .map(|&i| clips_of(i, false))
        .collect::<Result<Vec<_>>>()?;

    let train_detectors = |positions: &[usize], seed: u64| -> Result<DetectorSet> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut sources = Vec::new();
        for &p in positions {
            let v = &data[train_idx[p]];
            let vc = &train_clips[p];
            let l = vc.labels.as_ref().expect("training clips are labeled");
            for (fv, bits) in vc.fvs.iter().zip(l) {
                rows.push(fv.clone());
                labels.push(*bits);
                sources.push((v.video_id.as_str(), v.identity_id.as_str()));
            }
        }
        let x = FeatureMatrix::from_rows(&rows)?;
        let options = DetectorOptions {
            seed,
            ..config.detector.clone()
        };
        expression::train_expression_detectors(&x, &labels, &sources, &options)
    };

    let mut train_features = vec![[0.0; EXPRESSION_COUNT]; train_idx.len()];
    let mut inner_sets = Vec::with_capacity(inner.len());
    for s in inner {
        let set = train_detectors(&s.train, derive_seed(config.seed, fold, 200 + s.fold as u64))?;
        for &p in &s.test {
            train_features[p] = expression::score_video(&set, train_clips[p].fvs.iter().map(Vec::as_slice))?;
        }
        inner_sets.push(set);
    }
    for (k, set) in inner_sets.into_iter().enumerate() {
        ctx.objects.push(LearnedObject {
            name: format!("detectors/inner/{k}"),
            provenance: set.provenance,
        });
    }
    let all: Vec<usize> = (0..train_idx.len()).collect();
    let final_set = train_detectors(&all, derive_seed(config.seed, fold, 300))?;
    warnings.extend(final_set.warnings.iter().map(|w| format!("fold {fold}: {w}")));
    let mut test_features = Vec::with_capacity(ctx.test.len());
    let mut clip_scores = Vec::new();
    for vc in &test_clips {
        test_features.push(expression::score_video(&final_set, vc.fvs.iter().map(Vec::as_slice))?);
        if let Some(l) = &vc.labels {
            for (fv, bits) in vc.fvs.iter().zip(l) {
                clip_scores.push((final_set.score_clip(fv)?, *bits));
            }
        }
    }
    ctx.objects.push(LearnedObject {
        name: "detectors".into(),
        provenance: final_set.provenance,
    });
    Ok(PredictedExpressions {
        train: train_features,
        test: test_features,
        test_clips: clip_scores,
    })
}
