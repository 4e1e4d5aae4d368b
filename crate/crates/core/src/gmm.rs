//! Diagonal-covariance Gaussian mixtures trained by EM.
//!
//! Responsibilities are evaluated in the log domain. Per-row work runs in
//! parallel but every reduction over rows happens in row order, so a fit is
//! bit-identical regardless of the thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DescriptorBag;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Added to each component's responsibility mass so no weight reaches zero.
const MASS_EPS: f64 = 10.0 * f64::EPSILON;
/// Absolute lower bound on variances, for dimensions with zero data variance.
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    // log w_k - 0.5 * sum_d ln(2 pi var_kd)
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl GaussianMixture {
    /// `means` and `variances` are row-major `K x D`.
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if dim == 0 || k == 0 {
            return Err(Error::InvalidConfig("mixture needs D >= 1 and K >= 1".into()));
        }
        if means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                found: means.len().min(variances.len()),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture means".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("mixture variances must be positive".into()));
        }
        let inv_var: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
        let log_norm = (0..k)
            .map(|c| {
                let log_det: f64 = variances[c * dim..(c + 1) * dim].iter().map(|v| v.ln()).sum();
                weights[c].ln() - 0.5 * (dim as f64 * LN_2PI + log_det)
            })
            .collect();
        Ok(GaussianMixture {
            dim,
            weights,
            means,
            variances,
            log_norm,
            inv_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// Short content hash identifying this mixture's parameters.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.components() as u64).to_le_bytes());
        for v in self.weights.iter().chain(&self.means).chain(&self.variances) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// `log(w_k N(x; mu_k, var_k))` for every component, written to `out`.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let diff = x[j] - mu[j];
                q += diff * diff * iv[j];
            }
            *o = self.log_norm[k] - 0.5 * q;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior input".into()));
        }
        Ok(())
    }

    /// Log posterior `ln gamma(k)` for each component.
    pub fn log_posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.components()];
        self.log_joint(x, &mut out);
        let lse = log_sum_exp(&out);
        out.iter_mut().for_each(|v| *v -= lse);
        Ok(out)
    }

    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.components()];
        self.posteriors_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked posterior evaluation; returns the log density of `x`.
    pub(crate) fn posteriors_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.log_joint(x, out);
        let lse = log_sum_exp(out);
        let mut total = 0.0;
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
            total += *v;
        }
        // Renormalize away the rounding of exp.
        out.iter_mut().for_each(|v| *v /= total);
        lse
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.components()];
        self.log_joint(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MixtureFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(text)?;
        file.into_mixture()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

const MIXTURE_FORMAT: &str = "diagonal-gmm";
const MIXTURE_VERSION: u32 = 1;

/// On-disk mixture: row-major `K x D` parameter arrays.
#[derive(Debug, Serialize, Deserialize)]
struct MixtureFile {
    format: String,
    version: u32,
    dim: usize,
    components: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl From<&GaussianMixture> for MixtureFile {
    fn from(g: &GaussianMixture) -> Self {
        MixtureFile {
            format: MIXTURE_FORMAT.into(),
            version: MIXTURE_VERSION,
            dim: g.dim,
            components: g.components(),
            weights: g.weights.clone(),
            means: g.means.clone(),
            variances: g.variances.clone(),
        }
    }
}

impl MixtureFile {
    fn into_mixture(self) -> Result<GaussianMixture> {
        if self.format != MIXTURE_FORMAT || self.version != MIXTURE_VERSION {
            return Err(Error::Format(format!(
                "unsupported mixture file {} v{}",
                self.format, self.version
            )));
        }
        if self.weights.len() != self.components {
            return Err(Error::Format("weights length does not match components".into()));
        }
        GaussianMixture::new(self.dim, self.weights, self.means, self.variances)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Variances are floored at this fraction of the data variance.
    pub variance_floor_factor: f64,
    pub kmeans_iterations: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            tolerance: 1e-5,
            seed: 0,
            variance_floor_factor: 1e-4,
            kmeans_iterations: 10,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if !(self.variance_floor_factor >= 0.0) {
            return Err(Error::InvalidConfig("variance_floor_factor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood of the initial model and after every EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_gmm(samples: &DescriptorBag, k: usize, config: &EmConfig) -> Result<GaussianMixture> {
    fit_gmm_traced(samples, k, config).map(|fit| fit.mixture)
}

pub fn fit_gmm_traced(samples: &DescriptorBag, k: usize, config: &EmConfig) -> Result<GmmFit> {
    config.validate()?;
    let n = samples.len();
    if k == 0 {
        return Err(Error::InvalidConfig("component count must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientSamples { needed: k, found: n });
    }
    let data_var = column_variances(samples);
    if data_var.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all rows are identical".into()));
    }
    let floors: Vec<f64> = data_var
        .iter()
        .map(|v| (v * config.variance_floor_factor).max(MIN_VARIANCE))
        .collect();

    let labels = kmeans(samples, k, config.kmeans_iterations, config.seed);
    let mut resp = vec![0.0; n * k];
    for (i, &c) in labels.iter().enumerate() {
        resp[i * k + c] = 1.0;
    }
    let mut mixture = m_step(samples, &resp, k, &floors)?;
    let mut ll = e_step(&mixture, samples, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        mixture = m_step(samples, &resp, k, &floors)?;
        let next = e_step(&mixture, samples, &mut resp);
        trace.push(next);
        iterations += 1;
        let improvement = (next - ll) / ll.abs().max(1.0);
        ll = next;
        if improvement < config.tolerance {
            converged = true;
            break;
        }
    }
    for c in 0..k {
        let collapsed = mixture
            .variance(c)
            .iter()
            .zip(&floors)
            .all(|(v, f)| v <= f);
        if collapsed {
            return Err(Error::Degenerate(format!(
                "component {c} collapsed onto the variance floor in every dimension"
            )));
        }
    }
    Ok(GmmFit {
        mixture,
        log_likelihoods: trace,
        iterations,
        converged,
    })
}

/// Mean per-sample log density.
pub fn log_likelihood(gmm: &GaussianMixture, samples: &DescriptorBag) -> Result<f64> {
    if samples.dim() != gmm.dim() {
        return Err(Error::DimensionMismatch {
            expected: gmm.dim(),
            found: samples.dim(),
        });
    }
    let per_row: Vec<f64> = samples
        .as_slice()
        .par_chunks_exact(gmm.dim())
        .map(|x| {
            let mut buf = vec![0.0; gmm.components()];
            gmm.log_joint(x, &mut buf);
            log_sum_exp(&buf)
        })
        .collect();
    Ok(per_row.iter().sum::<f64>() / samples.len() as f64)
}

/// Fills `resp` with posteriors; returns the mean log-likelihood.
fn e_step(gmm: &GaussianMixture, samples: &DescriptorBag, resp: &mut [f64]) -> f64 {
    let k = gmm.components();
    let per_row: Vec<f64> = resp
        .par_chunks_exact_mut(k)
        .zip(samples.as_slice().par_chunks_exact(gmm.dim()))
        .map(|(r, x)| gmm.posteriors_into(x, r))
        .collect();
    per_row.iter().sum::<f64>() / samples.len() as f64
}

fn m_step(samples: &DescriptorBag, resp: &[f64], k: usize, floors: &[f64]) -> Result<GaussianMixture> {
    let n = samples.len();
    let d = samples.dim();
    let params: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|c| {
            let mut mass = MASS_EPS;
            let mut mean = vec![0.0; d];
            for (i, x) in samples.rows().enumerate() {
                let r = resp[i * k + c];
                mass += r;
                for j in 0..d {
                    mean[j] += r * x[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut var = vec![0.0; d];
            for (i, x) in samples.rows().enumerate() {
                let r = resp[i * k + c];
                for j in 0..d {
                    let diff = x[j] - mean[j];
                    var[j] += r * diff * diff;
                }
            }
            for j in 0..d {
                var[j] = (var[j] / mass).max(floors[j]);
            }
            (mass, mean, var)
        })
        .collect();
    let total: f64 = params.iter().map(|p| p.0).sum();
    debug_assert!(total >= n as f64 * 0.999);
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k * d);
    let mut variances = Vec::with_capacity(k * d);
    for (mass, mean, var) in params {
        weights.push(mass / total);
        means.extend(mean);
        variances.extend(var);
    }
    GaussianMixture::new(d, weights, means, variances)
}

pub(crate) fn column_variances(samples: &DescriptorBag) -> Vec<f64> {
    let n = samples.len() as f64;
    let d = samples.dim();
    let mut mean = vec![0.0; d];
    for x in samples.rows() {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in samples.rows() {
        for j in 0..d {
            let diff = x[j] - mean[j];
            var[j] += diff * diff;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    var
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations; returns hard assignments.
fn kmeans(samples: &DescriptorBag, k: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let n = samples.len();
    let d = samples.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<f64> = Vec::with_capacity(k * d);
    centers.extend_from_slice(samples.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = samples.rows().map(|x| sq_dist(x, &centers[..d])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(samples.row(pick));
        for (i, x) in samples.rows().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(x, &centers[start..start + d]));
        }
    }

    let assign = |centers: &[f64]| -> Vec<usize> {
        samples
            .as_slice()
            .par_chunks_exact(d)
            .map(|x| {
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let dist = sq_dist(x, &centers[c * d..(c + 1) * d]);
                    if dist < best.0 {
                        best = (dist, c);
                    }
                }
                best.1
            })
            .collect()
    };

    let mut labels = assign(&centers);
    for _ in 0..iterations {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (x, &c) in samples.rows().zip(&labels) {
            counts[c] += 1;
            for j in 0..d {
                sums[c * d + j] += x[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = samples
                    .rows()
                    .zip(&labels)
                    .map(|(x, &l)| sq_dist(x, &centers[l * d..(l + 1) * d]))
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
                    .0;
                centers[c * d..(c + 1) * d].copy_from_slice(samples.row(far));
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    // Guarantee every component starts with at least one member.
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&c| counts[c] += 1);
    for c in 0..k {
        if counts[c] == 0 {
            if let Some(i) = (0..n).find(|&i| counts[labels[i]] > 1) {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
            }
        }
    }
    labels
}

/// Density of a 1-D normal; used by tests and synthetic generators.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}
