//! Experiment reports: a deterministic JSON record plus text and CSV
//! renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::{AucAggregation, ExperimentConfig, ExperimentResult, ExpressionSource, VideoData};
use crate::folds::FoldBalance;
use crate::fusion::{Modality, MODALITY_COUNT};
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "deceptio-report";
pub const REPORT_VERSION: u32 = 1;

/// Hex SHA-256 of the value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub modalities: Vec<Modality>,
    /// Per classifier, under the report's aggregation.
    pub auc: Vec<Option<f64>>,
    pub pooled_auc: Vec<Option<f64>>,
    pub fold_mean_auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub balance: FoldBalance,
    /// Names of the learned objects checked for leakage.
    pub audited_objects: Vec<String>,
    /// row name -> classifier -> fusion weights
    pub weights: BTreeMap<String, BTreeMap<String, [f64; MODALITY_COUNT]>>,
    /// row name -> classifier -> AUC of the fused inner scores
    pub inner_auc: BTreeMap<String, BTreeMap<String, f64>>,
    /// classifier -> modality -> selected C
    pub selected_c: BTreeMap<String, BTreeMap<Modality, f64>>,
}

/// Test-fold scores of one video under one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub fold: usize,
    pub video_id: String,
    pub identity_id: String,
    pub label: u8,
    pub classifier: String,
    /// Standardized per-modality scores in fusion order.
    pub modality: [Option<f64>; MODALITY_COUNT],
    /// row name -> fused score
    pub fused: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorAuc {
    pub expression: String,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub description: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub expression_source: ExpressionSource,
    pub aggregation: AucAggregation,
    /// Column headings.
    pub classifiers: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub detector_auc: Vec<DetectorAuc>,
    pub mean_detector_auc: Option<f64>,
    pub folds: Vec<FoldReport>,
    pub scores: Vec<ScoreRecord>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub reference: Vec<ReferenceValue>,
}

fn notes(config: &ExperimentConfig) -> Vec<String> {
    let c = &config.components;
    vec![
        format!(
            "GMM components: motion {}, audio {}, transcript {}; EM tolerance {}, at most {} iterations, k-means initialization",
            c.motion, c.audio, c.transcript, config.em.tolerance, config.em.max_iterations
        ),
        format!(
            "Fisher Vector normalization: {}; motion PCA: {}",
            config.fv_power.map_or("off".to_string(), |a| format!("power {a} + L2")),
            config.motion_pca.map_or("off".to_string(), |d| d.to_string())
        ),
        format!(
            "clips of {} s at {} fps; detector output: {:?}",
            config.clip_seconds, config.fps, config.detector.output
        ),
        format!(
            "fusion weights from a {}-step simplex grid on {}-fold identity-grouped inner validation, scores standardized per modality",
            config.fusion_step, config.inner_folds
        ),
        "classifier hyperparameters are recorded in the config block".to_string(),
        "pooled and fold-mean AUC-PR are both recorded".to_string(),
    ]
}

fn reference_values() -> Vec<ReferenceValue> {
    [
        ("published courtroom-trial result: All Modalities, L-SVM", 0.8773),
        ("published courtroom-trial result: ground-truth expressions with all modalities, LR", 0.9221),
        ("published courtroom-trial result: mean micro-expression detector AUC", 0.6511),
    ]
    .into_iter()
    .map(|(d, v)| ReferenceValue {
        description: d.to_string(),
        value: v,
    })
    .collect()
}

impl ExperimentReport {
    pub fn build(
        result: &ExperimentResult,
        data: &[VideoData],
        config: &ExperimentConfig,
        config_hash: String,
    ) -> Result<Self> {
        let labels: Vec<bool> = data.iter().map(|v| v.label.is_positive()).collect();
        let pooled = result.grid(&labels, AucAggregation::Pooled);
        let fold_mean = result.grid(&labels, AucAggregation::FoldMean);
        let rows = result
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| ReportRow {
                name: row.name.clone(),
                modalities: row.modalities.clone(),
                auc: match config.aggregation {
                    AucAggregation::Pooled => pooled[r].clone(),
                    AucAggregation::FoldMean => fold_mean[r].clone(),
                },
                pooled_auc: pooled[r].clone(),
                fold_mean_auc: fold_mean[r].clone(),
            })
            .collect();
        let clf_names: Vec<String> = result.classifiers.iter().map(|c| c.kind.short_name().to_string()).collect();
        let clf_slugs: Vec<&str> = result.classifiers.iter().map(|c| c.kind.slug()).collect();

        let predicted = config.expressions == ExpressionSource::Predicted
            && result.modalities.contains(&Modality::Expression);
        let detector_auc: Vec<DetectorAuc> = if predicted {
            result
                .detector_auc()
                .into_iter()
                .map(|(e, auc)| DetectorAuc {
                    expression: e.slug().to_string(),
                    auc,
                })
                .collect()
        } else {
            Vec::new()
        };
        let defined: Vec<f64> = detector_auc.iter().filter_map(|d| d.auc).collect();
        let mean_detector_auc =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

        let mut folds = Vec::new();
        let mut scores = Vec::new();
        let mut warnings = Vec::new();
        for f in &result.folds {
            let mut weights = BTreeMap::new();
            let mut inner_auc = BTreeMap::new();
            for (r, row) in result.rows.iter().enumerate() {
                let w: &mut BTreeMap<String, [f64; MODALITY_COUNT]> = weights.entry(row.name.clone()).or_default();
                let a: &mut BTreeMap<String, f64> = inner_auc.entry(row.name.clone()).or_default();
                for (c, cell) in f.cells[r].iter().enumerate() {
                    w.insert(clf_slugs[c].to_string(), *cell.weights.alpha());
                    a.insert(clf_slugs[c].to_string(), cell.inner_auc);
                }
            }
            let selected_c = f
                .selected_c
                .iter()
                .enumerate()
                .filter(|(_, m)| !m.is_empty())
                .map(|(c, m)| (clf_slugs[c].to_string(), m.clone()))
                .collect();
            folds.push(FoldReport {
                fold: f.fold,
                balance: f.balance.clone(),
                audited_objects: f.audited.clone(),
                weights,
                inner_auc,
                selected_c,
            });
            for (c, slug) in clf_slugs.iter().enumerate() {
                for (t, &vi) in f.test.iter().enumerate() {
                    let v = &data[vi];
                    scores.push(ScoreRecord {
                        fold: f.fold,
                        video_id: v.video_id.clone(),
                        identity_id: v.identity_id.clone(),
                        label: v.label.as_u8(),
                        classifier: slug.to_string(),
                        modality: f.modality_scores[c][t],
                        fused: result
                            .rows
                            .iter()
                            .enumerate()
                            .map(|(r, row)| (row.name.clone(), f.fused[r][c][t]))
                            .collect(),
                    });
                }
            }
            warnings.extend(f.warnings.iter().cloned());
            if f.balance.positives == 0 || f.balance.negatives == 0 {
                warnings.push(format!("fold {}: test videos hold a single class", f.fold));
            }
        }

        Ok(ExperimentReport {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            config_hash,
            seed: config.seed,
            config: serde_json::to_value(config)?,
            expression_source: config.expressions,
            aggregation: config.aggregation,
            classifiers: clf_names,
            rows,
            detector_auc,
            mean_detector_auc,
            folds,
            scores,
            warnings,
            notes: notes(config),
            reference: reference_values(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(text)?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "not a version {REPORT_VERSION} {REPORT_FORMAT} file"
            )));
        }
        for row in &report.rows {
            if row.auc.len() != report.classifiers.len() {
                return Err(Error::Format(format!(
                    "row {:?} has {} values for {} classifiers",
                    row.name,
                    row.auc.len(),
                    report.classifiers.len()
                )));
            }
        }
        Ok(report)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.classifiers.is_empty()
    }

    /// Aligned table with one row per feature set and one column per
    /// classifier.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let agg = match self.aggregation {
            AucAggregation::Pooled => "pooled out-of-fold",
            AucAggregation::FoldMean => "mean over folds",
        };
        let _ = writeln!(out, "Deception detection AUC-PR ({agg})");
        let _ = writeln!(
            out,
            "config {}  seed {}  expressions {}",
            self.config_hash,
            self.seed,
            match self.expression_source {
                ExpressionSource::Predicted => "predicted",
                ExpressionSource::GroundTruth => "ground-truth",
            }
        );
        if self.is_empty() {
            let _ = writeln!(out, "no results");
            return out;
        }
        let name_width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Features".len());
        let col_width = self.classifiers.iter().map(String::len).max().unwrap_or(0).max(6);
        let _ = write!(out, "{:<name_width$}", "Features");
        for c in &self.classifiers {
            let _ = write!(out, "  {c:>col_width$}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<name_width$}", row.name);
            for v in &row.auc {
                let cell = v.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = write!(out, "  {cell:>col_width$}");
            }
            out.push('\n');
        }
        if !self.detector_auc.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "Micro-expression detectors (clip AUC-PR)");
            for d in &self.detector_auc {
                let cell = d.auc.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(out, "  {:<16}{cell:>8}", d.expression);
            }
            if let Some(m) = self.mean_detector_auc {
                let _ = writeln!(out, "  {:<16}{:>8}", "mean", format!("{m:.4}"));
            }
        }
        if !self.warnings.is_empty() {
            out.push('\n');
            for w in &self.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
        }
        out.push('\n');
        let _ = writeln!(out, "Reference values (documentation only):");
        for r in &self.reference {
            let _ = writeln!(out, "  {:.4}  {}", r.value, r.description);
        }
        out
    }

    fn provenance_line(&self) -> String {
        format!("# config {} seed {}\n", self.config_hash, self.seed)
    }

    /// `feature_set,classifier,auc` series for bar charts, after a `#`
    /// line carrying the config hash and seed.
    pub fn bar_csv(&self) -> String {
        let mut out = self.provenance_line();
        out.push_str("feature_set,classifier,auc\n");
        for row in &self.rows {
            for (c, v) in self.classifiers.iter().zip(&row.auc) {
                let cell = v.map_or(String::new(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "{},{},{}", csv_field(&row.name), csv_field(c), cell);
            }
        }
        out
    }

    /// Score file for one fold and classifier: identifiers, label, the four
    /// standardized modality scores and one fused column per feature set.
    pub fn fold_scores_csv(&self, fold: usize, classifier_slug: &str) -> String {
        let mut out = self.provenance_line();
        out.push_str("video_id,identity_id,label");
        for m in Modality::ALL {
            let _ = write!(out, ",{m}");
        }
        for row in &self.rows {
            let _ = write!(out, ",{}", csv_field(&row.name));
        }
        out.push('\n');
        for s in self
            .scores
            .iter()
            .filter(|s| s.fold == fold && s.classifier == classifier_slug)
        {
            let _ = write!(out, "{},{},{}", csv_field(&s.video_id), csv_field(&s.identity_id), s.label);
            for v in &s.modality {
                let _ = write!(out, ",{}", v.map_or(String::new(), |v| format!("{v}")));
            }
            for row in &self.rows {
                let _ = write!(out, ",{}", s.fused.get(&row.name).map_or(String::new(), |v| format!("{v}")));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
