use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

/// Gaussian Naive Bayes over the non-constant training columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayes {
    /// Columns kept after dropping those constant across the training rows.
    pub feature_mask: Vec<usize>,
    /// Per class (negative, positive): mean and variance over masked columns.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub log_priors: [f64; 2],
}

impl GaussianNaiveBayes {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool]) -> Self {
        let first = features.row(0);
        let feature_mask: Vec<usize> = (0..features.cols())
            .filter(|&j| features.iter_rows().any(|r| r[j] != first[j]))
            .collect();
        let x = features.select_cols(&feature_mask);
        let d = x.cols();

        let mut means = [vec![0.0; d], vec![0.0; d]];
        let mut variances = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [0usize; 2];
        for (r, &l) in x.iter_rows().zip(labels) {
            let c = l as usize;
            counts[c] += 1;
            for j in 0..d {
                means[c][j] += r[j];
            }
        }
        for c in 0..2 {
            means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
        }
        for (r, &l) in x.iter_rows().zip(labels) {
            let c = l as usize;
            for j in 0..d {
                variances[c][j] += (r[j] - means[c][j]).powi(2);
            }
        }
        // Smoothing proportional to the largest overall feature variance.
        let overall = super::Standardizer::fit(&x);
        let max_var = overall
            .scale
            .iter()
            .map(|s| s * s)
            .fold(0.0f64, f64::max);
        let epsilon = 1e-9 * if max_var > 0.0 { max_var } else { 1.0 };
        for c in 0..2 {
            variances[c]
                .iter_mut()
                .for_each(|v| *v = *v / counts[c] as f64 + epsilon);
        }
        let n = labels.len() as f64;
        GaussianNaiveBayes {
            feature_mask,
            means,
            variances,
            log_priors: [(counts[0] as f64 / n).ln(), (counts[1] as f64 / n).ln()],
        }
    }

    fn class_log_likelihood(&self, c: usize, x: &[f64]) -> f64 {
        self.feature_mask
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                let v = self.variances[c][k];
                let d = x[j] - self.means[c][k];
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v)
            })
            .sum::<f64>()
            + self.log_priors[c]
    }

    /// `log P(positive | x) - log P(negative | x)`.
    pub fn log_odds(&self, x: &[f64]) -> f64 {
        self.class_log_likelihood(1, x) - self.class_log_likelihood(0, x)
    }
}
