//! Convex late fusion of per-modality scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::auc_pr;
use crate::{Error, Result};

pub const MODALITY_COUNT: usize = 4;

/// Fusion slots, in weight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Motion,
    Transcript,
    Audio,
    Expression,
}

impl Modality {
    pub const ALL: [Modality; MODALITY_COUNT] = [
        Modality::Motion,
        Modality::Transcript,
        Modality::Audio,
        Modality::Expression,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn slug(self) -> &'static str {
        match self {
            Modality::Motion => "motion",
            Modality::Transcript => "transcript",
            Modality::Audio => "audio",
            Modality::Expression => "expression",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.slug() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown modality {s:?}")))
    }
}

pub type ModalityScores = [f64; MODALITY_COUNT];

/// Nonnegative weights summing to one, in [`Modality::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; MODALITY_COUNT]", into = "[f64; MODALITY_COUNT]")]
pub struct FusionWeights([f64; MODALITY_COUNT]);

impl FusionWeights {
    pub fn new(alpha: [f64; MODALITY_COUNT]) -> Result<Self> {
        if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidConfig(format!("fusion weights {alpha:?} must be nonnegative")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("fusion weights sum to {sum}, not 1")));
        }
        Ok(FusionWeights(alpha))
    }

    pub fn uniform() -> Self {
        FusionWeights([1.0 / MODALITY_COUNT as f64; MODALITY_COUNT])
    }

    pub fn corner(m: Modality) -> Self {
        let mut a = [0.0; MODALITY_COUNT];
        a[m.index()] = 1.0;
        FusionWeights(a)
    }

    pub fn alpha(&self) -> &[f64; MODALITY_COUNT] {
        &self.0
    }

    /// Shannon entropy with terms added in ascending order, so permuted
    /// weight vectors compare equal.
    pub fn entropy(&self) -> f64 {
        let mut terms: Vec<f64> = self
            .0
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| -a * a.ln())
            .collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    }
}

impl TryFrom<[f64; MODALITY_COUNT]> for FusionWeights {
    type Error = Error;

    fn try_from(a: [f64; MODALITY_COUNT]) -> Result<Self> {
        FusionWeights::new(a)
    }
}

impl From<FusionWeights> for [f64; MODALITY_COUNT] {
    fn from(w: FusionWeights) -> Self {
        w.0
    }
}

/// `S = sum_m alpha_m S_m`.
pub fn fuse(scores: &ModalityScores, weights: &FusionWeights) -> f64 {
    scores.iter().zip(weights.alpha()).map(|(s, a)| s * a).sum()
}

/// Every weight vector on the simplex with entries that are multiples of
/// `step` and zero outside `active`, in ascending lexicographic order.
pub fn simplex_grid(step: f64, active: &[bool; MODALITY_COUNT]) -> Result<Vec<FusionWeights>> {
    if !(step > 0.0) || step > 1.0 {
        return Err(Error::InvalidConfig(format!("fusion grid step {step} gives an empty grid")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("fusion grid step {step} does not divide 1")));
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::InvalidConfig("no modality is active".into()));
    }
    let n = n as u32;
    let mut out = Vec::new();
    let mut parts = [0u32; MODALITY_COUNT];
    compositions(0, n, active, &mut parts, &mut |p| {
        out.push(FusionWeights(p.map(|c| f64::from(c) / f64::from(n))));
    });
    Ok(out)
}

fn compositions(
    slot: usize,
    remaining: u32,
    active: &[bool; MODALITY_COUNT],
    parts: &mut [u32; MODALITY_COUNT],
    emit: &mut dyn FnMut(&[u32; MODALITY_COUNT]),
) {
    if slot == MODALITY_COUNT - 1 {
        if remaining == 0 || active[slot] {
            parts[slot] = remaining;
            emit(parts);
        }
        return;
    }
    let max = if active[slot] { remaining } else { 0 };
    for c in 0..=max {
        parts[slot] = c;
        compositions(slot + 1, remaining - c, active, parts, emit);
    }
    parts[slot] = 0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub weights: FusionWeights,
    pub auc: f64,
    pub grid_size: usize,
}

/// Grid search for the weights maximizing AUC-PR of the fused scores.
/// Ties go to the highest-entropy vector, then to the first in grid order.
pub fn search_weights(
    scores: &[ModalityScores],
    labels: &[bool],
    step: f64,
    active: &[bool; MODALITY_COUNT],
) -> Result<WeightSearch> {
    let grid = simplex_grid(step, active)?;
    let mut fused = vec![0.0; scores.len()];
    let mut best: Option<(f64, f64, FusionWeights)> = None;
    for w in &grid {
        for (f, s) in fused.iter_mut().zip(scores) {
            *f = fuse(s, w);
        }
        let auc = auc_pr(&fused, labels)?;
        let entropy = w.entropy();
        let better = match &best {
            None => true,
            Some((b_auc, b_ent, _)) => auc > *b_auc || (auc == *b_auc && entropy > *b_ent),
        };
        if better {
            best = Some((auc, entropy, *w));
        }
    }
    let (auc, _, weights) = best.expect("grid is nonempty");
    Ok(WeightSearch {
        weights,
        auc,
        grid_size: grid.len(),
    })
}

/// Per-modality zero-mean, unit-variance scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStandardizer {
    pub mean: ModalityScores,
    pub scale: ModalityScores,
}

impl ScoreStandardizer {
    pub fn fit(scores: &[ModalityScores]) -> Self {
        let n = scores.len().max(1) as f64;
        let mut mean = [0.0; MODALITY_COUNT];
        for s in scores {
            for m in 0..MODALITY_COUNT {
                mean[m] += s[m];
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = [0.0; MODALITY_COUNT];
        for s in scores {
            for m in 0..MODALITY_COUNT {
                var[m] += (s[m] - mean[m]).powi(2);
            }
        }
        let scale = var.map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        ScoreStandardizer { mean, scale }
    }

    pub fn apply(&self, s: &ModalityScores) -> ModalityScores {
        std::array::from_fn(|m| (s[m] - self.mean[m]) / self.scale[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [bool; 4] = [true; 4];

    #[test]
    fn fuse_examples() {
        let s = [0.8, 0.6, 0.4, 0.2];
        assert_eq!(fuse(&s, &FusionWeights::corner(Modality::Motion)), 0.8);
        assert!((fuse(&s, &FusionWeights::uniform()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_validation() {
        assert!(FusionWeights::new([0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(FusionWeights::new([0.5, 0.6, 0.0, -0.1]).is_err());
        assert!(FusionWeights::new([0.5, 0.4, 0.0, 0.0]).is_err());
        assert!(serde_json::from_str::<FusionWeights>("[1, 1, 0, 0]").is_err());
        let w: FusionWeights = serde_json::from_str("[0.25, 0.25, 0.25, 0.25]").unwrap();
        assert_eq!(w, FusionWeights::uniform());
    }

    #[test]
    fn grid_enumeration() {
        let g = simplex_grid(0.5, &ALL).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(simplex_grid(0.05, &ALL).unwrap().len(), 1771);
        assert_eq!(simplex_grid(0.05, &[true, false, false, true]).unwrap().len(), 21);
        assert!(simplex_grid(2.0, &ALL).is_err());
        assert!(simplex_grid(0.3, &ALL).is_err());
        let corners = g.iter().filter(|w| w.alpha().contains(&1.0)).count();
        assert_eq!(corners, 4);
        let arrays: Vec<[f64; 4]> = g.iter().map(|w| *w.alpha()).collect();
        let mut sorted = arrays.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(arrays, sorted);
    }

    #[test]
    fn identical_modalities_pick_uniform() {
        let scores: Vec<ModalityScores> = (0..10).map(|i| [i as f64; 4]).collect();
        let labels: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let r = search_weights(&scores, &labels, 0.05, &ALL).unwrap();
        assert_eq!(r.weights, FusionWeights::uniform());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let s = [[1.0, 2.0, 5.0, 0.0], [3.0, 2.0, 7.0, 10.0]];
        let st = ScoreStandardizer::fit(&s);
        assert_eq!(st.apply(&s[0]), [-1.0, 0.0, -1.0, -1.0]);
        assert_eq!(st.apply(&s[1]), [1.0, 0.0, 1.0, 1.0]);
    }
}
