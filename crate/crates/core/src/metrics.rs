//! Area under the precision-recall curve.

use crate::{Error, Result};

/// Average precision. Scores are visited in descending order; each group of
/// tied scores is a single threshold, and precision and recall are taken
/// after the whole group:
/// `AP = sum_n (R_n - R_{n-1}) P_n`.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let total = positives as f64;
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `None` instead of an error when the labels hold a single class.
pub fn auc_pr_if_defined(scores: &[f64], labels: &[bool]) -> Option<f64> {
    auc_pr(scores, labels).ok()
}
