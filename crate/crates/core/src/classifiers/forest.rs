use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, DecisionTree, FeatureMatrix, TreeOptions};

/// Bagged CART trees with `floor(sqrt(d))` features tried per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

fn tree_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64)
}

impl RandomForest {
    pub(crate) fn train(features: &FeatureMatrix, labels: &[bool], spec: &ClassifierSpec) -> Self {
        let n = labels.len();
        let max_features = ((features.cols() as f64).sqrt().floor() as usize).max(1);
        let options = TreeOptions {
            max_depth: spec.max_depth,
            max_features: Some(max_features),
            ..TreeOptions::default()
        };
        let trees = (0..spec.tree_count)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(spec.seed, t));
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                DecisionTree::train(features, labels, &counts, &options, Some(&mut rng))
            })
            .collect();
        RandomForest { trees }
    }

    /// Fraction of trees whose leaf favors the positive class.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x) > 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierKind;

    #[test]
    fn votes_are_quantized_and_deterministic() {
        let rows: Vec<[f64; 3]> = (0..30).map(|i| [i as f64, (i * 7 % 5) as f64, 1.0]).collect();
        let labels: Vec<bool> = (0..30).map(|i| i >= 15).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let spec = ClassifierSpec::new(ClassifierKind::RandomForest);
        let a = RandomForest::train(&x, &labels, &spec);
        let b = RandomForest::train(&x, &labels, &spec);
        assert_eq!(a, b);
        for r in &rows {
            let v = a.vote_fraction(r) * 50.0;
            assert!((v - v.round()).abs() < 1e-9);
        }
        assert!(a.vote_fraction(&[29.0, 0.0, 1.0]) > 0.9);
    }
}
