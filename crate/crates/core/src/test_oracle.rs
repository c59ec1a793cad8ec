//! Test-only exhaustive decision tree: exact greedy splits over every
//! feature and every midpoint threshold. Used as an independent reference for
//! learnability checks; deliberately shares no code with the streaming or
//! forest implementations.

use crate::dataset::Label;
use crate::stats::entropy2;

pub(crate) enum OracleTree {
    Leaf(Label),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleTree>,
        right: Box<OracleTree>,
    },
}

impl OracleTree {
    pub(crate) fn fit(data: &[(&[f64], Label)], max_depth: u32) -> OracleTree {
        assert!(!data.is_empty());
        let indices: Vec<usize> = (0..data.len()).collect();
        build(data, &indices, max_depth)
    }

    pub(crate) fn predict(&self, x: &[f64]) -> Label {
        match self {
            OracleTree::Leaf(label) => *label,
            OracleTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn majority(data: &[(&[f64], Label)], indices: &[usize]) -> Label {
    let infected = indices.iter().filter(|&&i| data[i].1.is_infected()).count();
    Label::from_bool(2 * infected > indices.len())
}

fn build(data: &[(&[f64], Label)], indices: &[usize], depth_left: u32) -> OracleTree {
    let infected = indices.iter().filter(|&&i| data[i].1.is_infected()).count();
    if infected == 0 || infected == indices.len() || depth_left == 0 || indices.len() < 2 {
        return OracleTree::Leaf(majority(data, indices));
    }

    let n_features = data[indices[0]].0.len();
    let total = [(indices.len() - infected) as f64, infected as f64];
    let parent = entropy2(total[0], total[1]);
    let n = indices.len() as f64;

    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = indices.to_vec();
    for feature in 0..n_features {
        sorted.sort_by(|&a, &b| data[a].0[feature].total_cmp(&data[b].0[feature]));
        let mut left = [0.0f64; 2];
        for pair in 0..sorted.len() - 1 {
            left[data[sorted[pair]].1.index()] += 1.0;
            let lo = data[sorted[pair]].0[feature];
            let hi = data[sorted[pair + 1]].0[feature];
            if lo == hi {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            let wl = left[0] + left[1];
            let right = [total[0] - left[0], total[1] - left[1]];
            let gain = parent
                - wl / n * entropy2(left[0], left[1])
                - (n - wl) / n * entropy2(right[0], right[1]);
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, feature, threshold));
            }
        }
    }

    let Some((gain, feature, threshold)) = best else {
        return OracleTree::Leaf(majority(data, indices));
    };
    if gain <= 1e-12 {
        return OracleTree::Leaf(majority(data, indices));
    }
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| data[i].0[feature] <= threshold);
    if left_idx.is_empty() || right_idx.is_empty() {
        return OracleTree::Leaf(majority(data, indices));
    }
    OracleTree::Split {
        feature,
        threshold,
        left: Box::new(build(data, &left_idx, depth_left - 1)),
        right: Box::new(build(data, &right_idx, depth_left - 1)),
    }
}
