use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: Option<usize>,
    /// A node with fewer (positively weighted) samples becomes a leaf.
    pub min_samples_split: usize,
    /// Features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Node {
    /// Weighted fraction of positive training samples reaching the leaf.
    Leaf { value: f64 },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART with Gini impurity and sample weights. Samples with `x[f] <= t` go
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

struct Pending {
    node: usize,
    samples: Vec<usize>,
    depth: usize,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

impl DecisionTree {
    pub fn train(
        features: &FeatureMatrix,
        labels: &[bool],
        weights: &[f64],
        options: &TreeOptions,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        let d = features.cols();
        let root: Vec<usize> = (0..labels.len()).filter(|&i| weights[i] > 0.0).collect();
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stack = vec![Pending {
            node: 0,
            samples: root,
            depth: 0,
        }];
        while let Some(Pending { node, samples, depth }) = stack.pop() {
            let total: f64 = samples.iter().map(|&i| weights[i]).sum();
            let pos: f64 = samples.iter().filter(|&&i| labels[i]).map(|&i| weights[i]).sum();
            let value = if total > 0.0 { pos / total } else { 0.0 };
            nodes[node] = Node::Leaf { value };
            let pure = pos <= 0.0 || pos >= total;
            if pure
                || samples.len() < options.min_samples_split
                || options.max_depth.is_some_and(|m| depth >= m)
            {
                continue;
            }
            // Features beyond the sampled ones are only visited when none of
            // the sampled ones has two distinct values.
            let (mut candidates, rest): (Vec<usize>, Vec<usize>) = match (options.max_features, rng.as_deref_mut()) {
                (Some(m), Some(r)) if m < d => {
                    let perm = sample(r, d, d).into_vec();
                    (perm[..m].to_vec(), perm[m..].to_vec())
                }
                _ => ((0..d).collect(), Vec::new()),
            };
            candidates.sort_unstable();
            let mut split = best_split(features, labels, weights, &samples, &candidates, total, pos);
            for f in rest {
                if split.is_some() {
                    break;
                }
                split = best_split(features, labels, weights, &samples, &[f], total, pos);
            }
            let Some((feature, threshold)) = split else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = samples
                .iter()
                .partition(|&&i| features.row(i)[feature] <= threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[node] = Node::Split {
                feature,
                threshold,
                left,
                right: left + 1,
            };
            stack.push(Pending {
                node: left + 1,
                samples: r,
                depth: depth + 1,
            });
            stack.push(Pending {
                node: left,
                samples: l,
                depth: depth + 1,
            });
        }
        DecisionTree { nodes }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Lowest weighted child impurity over the candidate features. Thresholds
/// are midpoints between consecutive distinct values.
fn best_split(
    x: &FeatureMatrix,
    labels: &[bool],
    weights: &[f64],
    samples: &[usize],
    candidates: &[usize],
    total: f64,
    pos: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = samples.to_vec();
    for &f in candidates {
        order.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]));
        let mut lw = 0.0;
        let mut lp = 0.0;
        for k in 0..order.len() - 1 {
            let i = order[k];
            lw += weights[i];
            if labels[i] {
                lp += weights[i];
            }
            let here = x.row(i)[f];
            let next = x.row(order[k + 1])[f];
            if here == next {
                continue;
            }
            let rw = total - lw;
            let rp = pos - lp;
            let impurity = lw * gini(lp, lw) + rw * gini(rp, rw);
            if best.is_none_or(|(b, _, _)| impurity < b - 1e-12) {
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next {
                    threshold = here;
                }
                best = Some((impurity, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}
