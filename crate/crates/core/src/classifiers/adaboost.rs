use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, DecisionTree, FeatureMatrix, TreeOptions};

/// Error substituted for a weak learner that classifies every weighted
/// sample correctly.
const PERFECT_ROUND_EPSILON: f64 = 1e-10;

/// Discrete two-class Adaboost over shallow weighted trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaboost {
    pub learners: Vec<DecisionTree>,
    pub alphas: Vec<f64>,
    /// Weighted error of each round's weak learner.
    pub round_errors: Vec<f64>,
}

fn vote(tree: &DecisionTree, x: &[f64]) -> f64 {
    if tree.predict(x) > 0.5 {
        1.0
    } else {
        -1.0
    }
}

impl Adaboost {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool], spec: &ClassifierSpec) -> Self {
        let n = labels.len();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let options = TreeOptions {
            max_depth: Some(spec.weak_learner_depth),
            ..TreeOptions::default()
        };
        let mut w = vec![1.0 / n as f64; n];
        let mut model = Adaboost {
            learners: Vec::new(),
            alphas: Vec::new(),
            round_errors: Vec::new(),
        };
        for _ in 0..spec.boosting_rounds {
            let tree = DecisionTree::train(features, labels, &w, &options, None);
            let h: Vec<f64> = features.iter_rows().map(|r| vote(&tree, r)).collect();
            let err: f64 = (0..n).filter(|&i| h[i] != y[i]).map(|i| w[i]).sum::<f64>()
                / w.iter().sum::<f64>();
            if err >= 0.5 {
                break;
            }
            let perfect = err <= 0.0;
            let e = if perfect { PERFECT_ROUND_EPSILON } else { err };
            let alpha = 0.5 * ((1.0 - e) / e).ln();
            model.learners.push(tree);
            model.alphas.push(alpha);
            model.round_errors.push(err);
            if perfect {
                break;
            }
            for i in 0..n {
                w[i] *= (-alpha * y[i] * h[i]).exp();
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
        }
        model
    }

    /// `sum_t alpha_t h_t(x)` with `h_t` in {-1, +1}.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.learners
            .iter()
            .zip(&self.alphas)
            .map(|(t, a)| a * vote(t, x))
            .sum()
    }

    /// Upper bound `prod_t 2 sqrt(e_t (1 - e_t))` on the training error after
    /// each round.
    pub fn training_error_bound(&self) -> Vec<f64> {
        let mut bound = 1.0;
        self.round_errors
            .iter()
            .map(|&e| {
                bound *= 2.0 * (e * (1.0 - e)).sqrt();
                bound
            })
            .collect()
    }
}
