//! Fisher Vector encoding of descriptor bags against a diagonal GMM.
//!
//! Layout of the `2DK` values: the mean-gradient blocks of all components
//! come first, then the variance-gradient blocks, each component-major:
//!
//! ```text
//! [ G_mu(0)[0..D] | G_mu(1)[0..D] | ... | G_sigma(0)[0..D] | ... | G_sigma(K-1)[0..D] ]
//! ```
//!
//! See [`mean_block`] and [`variance_block`] for the index ranges.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DescriptorBag;
use crate::gmm::GaussianMixture;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    pub values: Vec<f64>,
    pub gmm_id: String,
    pub dim: usize,
    pub components: usize,
    pub normalized: bool,
}

/// Index range of component `k`'s mean-gradient block.
pub fn mean_block(dim: usize, k: usize) -> Range<usize> {
    k * dim..(k + 1) * dim
}

/// Index range of component `k`'s variance-gradient block.
pub fn variance_block(dim: usize, components: usize, k: usize) -> Range<usize> {
    let base = dim * components;
    base + k * dim..base + (k + 1) * dim
}

pub fn encode_fisher(gmm: &GaussianMixture, bag: &DescriptorBag) -> Result<FisherVector> {
    let d = gmm.dim();
    let k = gmm.components();
    if bag.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bag.dim(),
        });
    }
    if bag.is_empty() {
        return Err(Error::Empty("cannot encode an empty bag".into()));
    }
    let t = bag.len();

    let mut gamma = vec![0.0; t * k];
    gamma
        .par_chunks_exact_mut(k)
        .zip(bag.as_slice().par_chunks_exact(d))
        .for_each(|(g, x)| {
            gmm.posteriors_into(x, g);
        });

    let mut values = vec![0.0; 2 * d * k];
    let (g_mu, g_sigma) = values.split_at_mut(d * k);
    // Accumulate in row order for reproducibility.
    for (row, x) in bag.rows().enumerate() {
        for c in 0..k {
            let gam = gamma[row * k + c];
            if gam == 0.0 {
                continue;
            }
            let mu = gmm.mean(c);
            let var = gmm.variance(c);
            for j in 0..d {
                let z = (x[j] - mu[j]) / var[j].sqrt();
                g_mu[c * d + j] += gam * z;
                g_sigma[c * d + j] += gam * (z * z - 1.0);
            }
        }
    }
    for c in 0..k {
        let w = gmm.weights()[c];
        let s_mu = 1.0 / (t as f64 * w.sqrt());
        let s_sigma = 1.0 / (t as f64 * (2.0 * w).sqrt());
        g_mu[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= s_mu);
        g_sigma[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= s_sigma);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fisher vector".into()));
    }
    Ok(FisherVector {
        values,
        gmm_id: gmm.id(),
        dim: d,
        components: k,
        normalized: false,
    })
}

/// Signed power normalization followed by L2 normalization. A zero vector is
/// returned unchanged (but flagged as normalized).
pub fn normalize_fv(fv: &FisherVector, power_alpha: f64) -> Result<FisherVector> {
    if fv.normalized {
        return Err(Error::AlreadyNormalized);
    }
    if !(power_alpha > 0.0 && power_alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "power exponent {power_alpha} is outside (0, 1]"
        )));
    }
    let mut values: Vec<f64> = fv
        .values
        .iter()
        .map(|&z| z.signum() * z.abs().powf(power_alpha))
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(FisherVector {
        values,
        normalized: true,
        ..fv.clone()
    })
}

/// PCA projection of local descriptors, fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub input_dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `output_dim x input_dim`, rows sorted by decreasing variance.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(samples: &DescriptorBag, output_dim: usize) -> Result<Self> {
        let d = samples.dim();
        if output_dim == 0 || output_dim > d {
            return Err(Error::InvalidConfig(format!(
                "PCA output dimension {output_dim} must be in 1..={d}"
            )));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for x in samples.rows() {
            for j in 0..d {
                mean[j] += x[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for x in samples.rows() {
            for a in 0..d {
                let da = x[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / n;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(output_dim * d);
        let mut explained = Vec::with_capacity(output_dim);
        for &idx in order.iter().take(output_dim) {
            let col = eig.eigenvectors.column(idx);
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            components.extend(col.iter().map(|v| v * sign));
            explained.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Pca {
            input_dim: d,
            mean,
            components,
            explained_variance: explained,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn transform(&self, bag: &DescriptorBag) -> Result<DescriptorBag> {
        if bag.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: bag.dim(),
            });
        }
        let d = self.input_dim;
        let m = self.output_dim();
        let mut out = Vec::with_capacity(bag.len() * m);
        let mut centered = vec![0.0; d];
        for x in bag.rows() {
            for j in 0..d {
                centered[j] = x[j] - self.mean[j];
            }
            for r in 0..m {
                let comp = &self.components[r * d..(r + 1) * d];
                out.push(comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
            }
        }
        let bag_out = DescriptorBag::new(m, out, None)?;
        match bag.timestamps() {
            Some(ts) => bag_out.with_timestamps(ts.to_vec()),
            None => Ok(bag_out),
        }
    }
}
