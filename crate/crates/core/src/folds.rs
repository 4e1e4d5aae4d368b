//! Identity-grouped k-fold splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::{Error, Result};

/// Assignment of every identity to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

/// Shuffles the sorted identities with `seed` and deals them round-robin.
pub fn grouped_kfold_identities<S: AsRef<str>>(identities: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut ids: Vec<&str> = identities.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < k {
        return Err(Error::InsufficientSamples {
            needed: k,
            found: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldPlan { k, seed, assignments })
}

pub fn grouped_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let ids: Vec<&str> = manifest.identities().into_keys().collect();
    grouped_kfold_identities(&ids, k, seed)
}

/// Train and test record indices for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, identity: &str) -> Option<usize> {
        self.assignments.get(identity).copied()
    }

    /// Identities per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Splits item indices given each item's identity.
    pub fn splits_for<S: AsRef<str>>(&self, identities: &[S]) -> Result<Vec<FoldSplit>> {
        let mut splits: Vec<FoldSplit> = (0..self.k)
            .map(|fold| FoldSplit {
                fold,
                train: Vec::new(),
                test: Vec::new(),
            })
            .collect();
        for (i, id) in identities.iter().enumerate() {
            let f = self.fold_of(id.as_ref()).ok_or_else(|| {
                Error::InvalidConfig(format!("identity {:?} has no fold", id.as_ref()))
            })?;
            for s in splits.iter_mut() {
                if s.fold == f {
                    s.test.push(i);
                } else {
                    s.train.push(i);
                }
            }
        }
        Ok(splits)
    }

    pub fn splits(&self, manifest: &DatasetManifest) -> Result<Vec<FoldSplit>> {
        let ids: Vec<&str> = manifest.records.iter().map(|r| r.identity_id.as_str()).collect();
        self.splits_for(&ids)
    }
}

/// Explicit per-fold video lists. Unlike a [`FoldPlan`] this can describe
/// any split, including invalid ones; the experiment's leakage guard is
/// what rejects those.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub folds: Vec<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn from_plan(plan: &FoldPlan, manifest: &DatasetManifest) -> Result<Self> {
        let name = |i: &usize| manifest.records[*i].video_id.clone();
        Ok(SplitFile {
            folds: plan
                .splits(manifest)?
                .iter()
                .map(|s| SplitSpec {
                    train: s.train.iter().map(name).collect(),
                    test: s.test.iter().map(name).collect(),
                })
                .collect(),
        })
    }

    /// Resolves video ids against `video_ids`.
    pub fn resolve<S: AsRef<str>>(&self, video_ids: &[S]) -> Result<Vec<FoldSplit>> {
        let index: BTreeMap<&str, usize> = video_ids
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_ref(), i))
            .collect();
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            let mut out = ids
                .iter()
                .map(|v| {
                    index
                        .get(v.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidConfig(format!("split names unknown video {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.sort_unstable();
            out.dedup();
            Ok(out)
        };
        self.folds
            .iter()
            .enumerate()
            .map(|(fold, s)| {
                let split = FoldSplit {
                    fold,
                    train: lookup(&s.train)?,
                    test: lookup(&s.test)?,
                };
                if split.test.is_empty() || split.train.is_empty() {
                    return Err(Error::InvalidConfig(format!("fold {fold} has an empty side")));
                }
                Ok(split)
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Positive and negative test counts per fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldBalance {
    pub fold: usize,
    pub identities: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn fold_balance(split: &FoldSplit, identities: &[&str], labels: &[bool]) -> FoldBalance {
    let ids: BTreeSet<&str> = split.test.iter().map(|&i| identities[i]).collect();
    let positives = split.test.iter().filter(|&&i| labels[i]).count();
    FoldBalance {
        fold: split.fold,
        identities: ids.len(),
        positives,
        negatives: split.test.len() - positives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:02}")).collect()
    }

    #[test]
    fn fifty_eight_identities_in_ten_folds() {
        let plan = grouped_kfold_identities(&ids(58), 10, 7).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![5, 5, 6, 6, 6, 6, 6, 6, 6, 6]);
    }

    #[test]
    fn videos_of_one_identity_share_a_fold() {
        let plan = grouped_kfold_identities(&ids(12), 4, 1).unwrap();
        let items = ["id03", "id01", "id03", "id07", "id03"];
        let splits = plan.splits_for(&items).unwrap();
        let home: Vec<usize> = splits
            .iter()
            .filter(|s| s.test.contains(&0))
            .map(|s| s.fold)
            .collect();
        assert_eq!(home.len(), 1);
        let s = &splits[home[0]];
        assert!(s.test.contains(&2) && s.test.contains(&4));
        let mut all: Vec<usize> = splits.iter().flat_map(|s| s.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn errors_and_determinism() {
        assert!(grouped_kfold_identities(&ids(3), 10, 0).is_err());
        assert_eq!(
            grouped_kfold_identities(&ids(20), 5, 9).unwrap(),
            grouped_kfold_identities(&ids(20), 5, 9).unwrap()
        );
        assert_ne!(
            grouped_kfold_identities(&ids(20), 5, 9).unwrap(),
            grouped_kfold_identities(&ids(20), 5, 10).unwrap()
        );
    }

    #[test]
    fn split_file_resolution() {
        let file = SplitFile {
            folds: vec![SplitSpec {
                train: vec!["b".into()],
                test: vec!["a".into(), "a".into()],
            }],
        };
        let s = file.resolve(&["a", "b"]).unwrap();
        assert_eq!((s[0].train.clone(), s[0].test.clone()), (vec![1], vec![0]));
        let bad = SplitFile {
            folds: vec![SplitSpec {
                train: vec!["zz".into()],
                test: vec!["a".into()],
            }],
        };
        assert!(bad.resolve(&["a", "b"]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn plan_partitions_identities(n in 2usize..80, k in 2usize..12, seed in 0u64..1000) {
            proptest::prop_assume!(n >= k);
            let plan = grouped_kfold_identities(&ids(n), k, seed).unwrap();
            proptest::prop_assert_eq!(plan.assignments.len(), n);
            let sizes = plan.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            proptest::prop_assert!(hi - lo <= 1 && *lo >= 1);
            let splits = plan.splits_for(&ids(n)).unwrap();
            for s in &splits {
                proptest::prop_assert_eq!(s.train.len() + s.test.len(), n);
            }
        }
    }
}
