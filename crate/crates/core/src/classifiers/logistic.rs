use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, FeatureMatrix, Standardizer};

/// L2-penalized logistic regression on standardized features, fit by
/// L-BFGS. The intercept is not penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sum_i log(1 + exp(-y_i (w.x_i + b))) + lambda/2 |w|^2`; the last entry
/// of `theta` is the bias. Returns the value and writes the gradient.
pub(crate) fn objective(theta: &[f64], x: &FeatureMatrix, y: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    let d = x.cols();
    let (w, b) = (&theta[..d], theta[d]);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut value = 0.0;
    for (r, &yi) in x.iter_rows().zip(y) {
        let z = r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        value += softplus(-yi * z);
        let coef = -yi * sigmoid(-yi * z);
        for j in 0..d {
            grad[j] += coef * r[j];
        }
        grad[d] += coef;
    }
    for j in 0..d {
        value += 0.5 * lambda * w[j] * w[j];
        grad[j] += lambda * w[j];
    }
    value
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes a smooth function with limited-memory BFGS and a backtracking
/// Armijo line search. Stops when the largest gradient entry is below `tol`.
pub(crate) fn lbfgs<F>(mut f: F, mut theta: Vec<f64>, tol: f64, max_iter: usize) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = theta.len();
    let mut grad = vec![0.0; n];
    let mut value = f(&theta, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut next_grad = vec![0.0; n];
    for _ in 0..max_iter {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < tol {
            break;
        }
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = history.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let bcoef = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - bcoef) * si);
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            direction = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &direction);
            history.clear();
        }

        let mut step = 1.0;
        let mut candidate = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                candidate[j] = theta[j] + step * direction[j];
            }
            let v = f(&candidate, &mut next_grad);
            if v <= value + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|j| candidate[j] - theta[j]).collect();
                let yv: Vec<f64> = (0..n).map(|j| next_grad[j] - grad[j]).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 {
                    if history.len() == MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, yv, 1.0 / sy));
                }
                std::mem::swap(&mut theta, &mut candidate);
                std::mem::swap(&mut grad, &mut next_grad);
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

impl LogisticRegression {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool], spec: &ClassifierSpec) -> Self {
        let standardizer = Standardizer::fit(features);
        let x = standardizer.apply_matrix(features);
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let lambda = spec.regularization;
        let theta = lbfgs(
            |t, g| objective(t, &x, &y, lambda, g),
            vec![0.0; x.cols() + 1],
            spec.tolerance,
            spec.max_iterations,
        );
        let bias = theta[x.cols()];
        LogisticRegression {
            standardizer,
            weights: theta[..x.cols()].to_vec(),
            bias,
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        sigmoid(dot(&z, &self.weights) + self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierKind;

    #[test]
    fn gradient_matches_finite_differences() {
        let x = FeatureMatrix::from_rows(&[[0.5, -1.0], [1.5, 2.0], [-0.3, 0.1]]).unwrap();
        let y = [1.0, -1.0, 1.0];
        let theta = [0.2, -0.4, 0.1];
        let mut g = [0.0; 3];
        objective(&theta, &x, &y, 1.0, &mut g);
        let mut scratch = [0.0; 3];
        for j in 0..3 {
            let h = 1e-6;
            let mut plus = theta;
            plus[j] += h;
            let mut minus = theta;
            minus[j] -= h;
            let fd = (objective(&plus, &x, &y, 1.0, &mut scratch) - objective(&minus, &x, &y, 1.0, &mut scratch))
                / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn optimum_agrees_with_gradient_descent() {
        let rows = [[0.0, 1.0], [1.0, 0.5], [2.0, -1.0], [3.0, 0.0], [1.5, 1.5], [0.5, -0.5]];
        let labels = [false, false, true, true, true, false];
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let mut spec = ClassifierSpec::new(ClassifierKind::LogisticRegression);
        spec.tolerance = 1e-10;
        let lr = LogisticRegression::train(&x, &labels, &spec);

        let z = lr.standardizer.apply_matrix(&x);
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let mut theta = vec![0.0; 3];
        let mut g = vec![0.0; 3];
        for _ in 0..20_000 {
            objective(&theta, &z, &y, 1.0, &mut g);
            for j in 0..3 {
                theta[j] -= 0.05 * g[j];
            }
        }
        for j in 0..2 {
            assert!((theta[j] - lr.weights[j]).abs() < 1e-6);
        }
        assert!((theta[2] - lr.bias).abs() < 1e-6);
        for r in &rows {
            let p = lr.probability(r);
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
