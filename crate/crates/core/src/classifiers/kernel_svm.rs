use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, FeatureMatrix, Standardizer};

/// `(x.y / dim + 1)^degree`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialKernel {
    pub degree: u32,
    pub dim: usize,
}

impl PolynomialKernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (dot / self.dim as f64 + 1.0).powi(self.degree as i32)
    }
}

const TAU: f64 = 1e-12;

/// Soft-margin kernel SVM trained by SMO with second-order working-set
/// selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSvm {
    pub standardizer: Standardizer,
    pub kernel: PolynomialKernel,
    /// Standardized support vectors, row-major.
    pub support: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
}

/// Dual solution on the training set.
#[derive(Debug, Clone)]
pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
}

pub(crate) fn smo(gram: &[f64], y: &[f64], c: f64, eps: f64, max_iter: usize) -> SmoSolution {
    let n = y.len();
    let k = |i: usize, j: usize| gram[i * n + j];
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let mut a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -b * b / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax - gmin < eps || j == usize::MAX {
            break;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k(i, i) + k(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k(i, i) + k(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_count += 1;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (ub + lb) / 2.0
    };
    SmoSolution { alpha, rho }
}

impl KernelSvm {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool], spec: &ClassifierSpec) -> Self {
        let standardizer = Standardizer::fit(features);
        let x = standardizer.apply_matrix(features);
        let kernel = PolynomialKernel {
            degree: spec.degree,
            dim: x.cols(),
        };
        let n = x.rows();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(x.row(i), x.row(j));
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let max_iter = spec.max_iterations.max(100 * n);
        let sol = smo(&gram, &y, spec.c, spec.tolerance, max_iter);
        let mut support = Vec::new();
        let mut coefficients = Vec::new();
        for i in 0..n {
            if sol.alpha[i] > 0.0 {
                support.extend_from_slice(x.row(i));
                coefficients.push(sol.alpha[i] * y[i]);
            }
        }
        KernelSvm {
            standardizer,
            kernel,
            support,
            coefficients,
            rho: sol.rho,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        let d = self.kernel.dim;
        self.coefficients
            .iter()
            .zip(self.support.chunks_exact(d))
            .map(|(a, sv)| a * self.kernel.eval(sv, &z))
            .sum::<f64>()
            - self.rho
    }
}
