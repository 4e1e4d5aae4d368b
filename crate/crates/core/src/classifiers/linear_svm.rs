use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, FeatureMatrix, Standardizer};

/// L2-regularized hinge-loss SVM on standardized features. The bias is
/// learned as the weight of a constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearSvm {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool], spec: &ClassifierSpec) -> Self {
        let standardizer = Standardizer::fit(features);
        let x = augment(&standardizer.apply_matrix(features));
        let mut w = solve_dual_cd(&x, labels, spec.c, spec.tolerance, spec.max_iterations, spec.seed);
        let bias = w.pop().expect("augmented weight vector");
        LinearSvm {
            standardizer,
            weights: w,
            bias,
            c: spec.c,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

fn augment(x: &FeatureMatrix) -> FeatureMatrix {
    let mut data = Vec::with_capacity(x.rows() * (x.cols() + 1));
    for r in x.iter_rows() {
        data.extend_from_slice(r);
        data.push(1.0);
    }
    FeatureMatrix::new(x.rows(), x.cols() + 1, data).expect("augmented shape")
}

/// `0.5 |w|^2 + C sum_i max(0, 1 - y_i w.x_i)`.
pub fn primal_objective(w: &[f64], x: &FeatureMatrix, labels: &[bool], c: f64) -> f64 {
    let hinge: f64 = x
        .iter_rows()
        .zip(labels)
        .map(|(r, &l)| {
            let y = if l { 1.0 } else { -1.0 };
            let m: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
            (1.0 - y * m).max(0.0)
        })
        .sum();
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * hinge
}

/// Dual coordinate descent for the hinge-loss SVM without an explicit bias.
/// Stops when the spread of projected gradients falls below `tolerance` or
/// after `max_epochs` passes. Returns the primal weights.
pub fn solve_dual_cd(
    x: &FeatureMatrix,
    labels: &[bool],
    c: f64,
    tolerance: f64,
    max_epochs: usize,
    seed: u64,
) -> Vec<f64> {
    let n = x.rows();
    let d = x.cols();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let q_diag: Vec<f64> = x.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            if q_diag[i] <= 0.0 {
                continue;
            }
            let xi = x.row(i);
            let g = y[i] * xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj += delta * xj;
                }
            }
        }
        if pg_max - pg_min < tolerance {
            break;
        }
    }
    w
}
