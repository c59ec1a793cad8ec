//! Incremental (Hoeffding) decision tree, the base learner of the adaptive
//! forest.
//!
//! Leaves keep per-class Gaussian summaries for each candidate feature.
//! Every `grace_period` weighted instances a leaf evaluates candidate binary
//! splits at ten decile probes of the pooled feature distribution and splits
//! when the information-gain gap between the best and runner-up features
//! beats the Hoeffding bound, or when the bound has shrunk under the tie
//! threshold.

use crate::dataset::Label;
use crate::rng::SeededRng;
use crate::stats::{decile_probes, entropy2, normal_cdf, Gaussian};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("instance width {got} does not match training width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("domain error: {0}")]
    DomainError(String),
}

/// Confidence radius on a mean of `n` observations with range `range`:
/// `sqrt(range^2 * ln(1/confidence) / (2n))`.
///
/// `confidence` may be 1 (the radius degenerates to 0); anything outside
/// (0, 1] is rejected.
pub fn hoeffding_bound(range: f64, confidence: f64, n: u64) -> Result<f64, TreeError> {
    if range.is_nan() || range <= 0.0 {
        return Err(TreeError::DomainError(format!(
            "range must be positive, got {range}"
        )));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(TreeError::DomainError(format!(
            "confidence must lie in (0, 1], got {confidence}"
        )));
    }
    if n == 0 {
        return Err(TreeError::DomainError("n must be at least 1".to_string()));
    }
    Ok((range * range * (1.0 / confidence).ln() / (2.0 * n as f64)).sqrt())
}

/// Base-learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Split confidence delta.
    pub split_confidence: f64,
    /// Tie threshold tau: split anyway once the bound shrinks below it.
    pub tie_threshold: f64,
    /// Weighted instances between split attempts at a leaf.
    pub grace_period: u64,
    /// Maximum split depth; `None` is unbounded.
    pub max_depth: Option<u32>,
    /// Candidate features per leaf; `None` uses every feature.
    pub subspace_size: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            split_confidence: 1e-7,
            tie_threshold: 0.05,
            grace_period: 50,
            max_depth: None,
            subspace_size: None,
            seed: 0,
        }
    }
}

/// Learning leaf: class counts plus per-candidate, per-class Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    counts: [f64; 2],
    /// Candidate feature ids, ascending.
    candidates: Vec<usize>,
    /// Parallel to `candidates`: Gaussian summary per class.
    stats: Vec<[Gaussian; 2]>,
    weight_since_attempt: f64,
}

impl Leaf {
    fn new(candidates: Vec<usize>, counts: [f64; 2]) -> Self {
        let stats = vec![[Gaussian::default(); 2]; candidates.len()];
        Self {
            counts,
            candidates,
            stats,
            weight_since_attempt: 0.0,
        }
    }

    pub fn counts(&self) -> [f64; 2] {
        self.counts
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    fn observe(&mut self, x: &[f64], label: Label, weight: f64) {
        self.counts[label.index()] += weight;
        for (slot, &feature) in self.candidates.iter().enumerate() {
            self.stats[slot][label.index()].update(x[feature], weight);
        }
        self.weight_since_attempt += weight;
    }

    fn probabilities(&self) -> [f64; 2] {
        let total = self.counts[0] + self.counts[1];
        [
            (self.counts[0] + 1.0) / (total + 2.0),
            (self.counts[1] + 1.0) / (total + 2.0),
        ]
    }

    /// Estimated class weights routed left of `threshold` on `feature`.
    fn left_weights(&self, feature: usize, threshold: f64) -> [f64; 2] {
        let slot = self
            .candidates
            .iter()
            .position(|&f| f == feature)
            .expect("split feature outside candidate set");
        let mut left = [0.0; 2];
        for (mass, g) in left.iter_mut().zip(&self.stats[slot]) {
            if g.weight() > 0.0 {
                *mass = g.weight() * normal_cdf(threshold, g.mean(), g.std_dev());
            }
        }
        left
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(Leaf),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Outcome of a split attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitDecision {
    Split { feature: usize, threshold: f64 },
    KeepLeaf,
}

/// The final split rule on the two leading candidate gains.
pub(crate) fn split_decision(best_gain: f64, second_gain: f64, eps: f64, tau: f64) -> bool {
    best_gain - second_gain > eps || eps < tau
}

/// Evaluate candidate splits at a leaf. Thresholds are the ten decile probes
/// of the pooled per-feature Gaussian; left/right class masses come from the
/// per-class Gaussian tails. Keeps the leaf when fewer than two classes have
/// been seen or every candidate is degenerate.
pub fn attempt_split(leaf: &Leaf, config: &TreeConfig) -> SplitDecision {
    let [w0, w1] = leaf.counts;
    if w0 <= 0.0 || w1 <= 0.0 {
        return SplitDecision::KeepLeaf;
    }
    let total = w0 + w1;
    let parent_entropy = entropy2(w0, w1);

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut second_gain = 0.0f64;
    for (slot, &feature) in leaf.candidates.iter().enumerate() {
        let Some((gain, threshold)) = best_probe(&leaf.stats[slot], total, parent_entropy) else {
            continue;
        };
        match best {
            Some((best_gain, _, _)) if gain <= best_gain => {
                if gain > second_gain {
                    second_gain = gain;
                }
            }
            _ => {
                if let Some((prev_gain, _, _)) = best {
                    second_gain = prev_gain;
                }
                best = Some((gain, feature, threshold));
            }
        }
    }

    let Some((best_gain, feature, threshold)) = best else {
        return SplitDecision::KeepLeaf;
    };
    if best_gain <= 1e-10 {
        return SplitDecision::KeepLeaf;
    }
    let n = total.round().max(1.0) as u64;
    let Ok(eps) = hoeffding_bound(1.0, config.split_confidence, n) else {
        return SplitDecision::KeepLeaf;
    };
    if split_decision(best_gain, second_gain, eps, config.tie_threshold) {
        SplitDecision::Split { feature, threshold }
    } else {
        SplitDecision::KeepLeaf
    }
}

/// Best (gain, threshold) for one feature, or `None` when its statistics are
/// degenerate (no spread or no mass).
fn best_probe(per_class: &[Gaussian; 2], total: f64, parent_entropy: f64) -> Option<(f64, f64)> {
    let pooled = per_class[0].merged(&per_class[1]);
    if pooled.weight() <= 0.0 {
        return None;
    }
    let spread = pooled.std_dev();
    if spread <= 0.0 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for &z in decile_probes() {
        let threshold = pooled.mean() + z * spread;
        let mut left = [0.0f64; 2];
        for class in 0..2 {
            let g = &per_class[class];
            if g.weight() > 0.0 {
                left[class] = g.weight() * normal_cdf(threshold, g.mean(), g.std_dev());
            }
        }
        let left_total = left[0] + left[1];
        let right_total = total - left_total;
        if left_total <= 1e-12 || right_total <= 1e-12 {
            continue;
        }
        let right = [
            per_class[0].weight() - left[0],
            per_class[1].weight() - left[1],
        ];
        let gain = (parent_entropy
            - left_total / total * entropy2(left[0], left[1])
            - right_total / total * entropy2(right[0], right[1]))
        .max(0.0);
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, threshold));
        }
    }
    best
}

/// Incremental decision tree over a fixed feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingTree {
    config: TreeConfig,
    n_features: usize,
    root: Node,
    weight_seen: f64,
}

impl HoeffdingTree {
    /// Candidate features are sampled from `config.seed` when
    /// `config.subspace_size` is set, otherwise every feature is a candidate.
    pub fn new(config: TreeConfig, n_features: usize) -> Self {
        assert!(n_features >= 1, "tree needs at least one feature");
        let candidates = match config.subspace_size {
            None => (0..n_features).collect(),
            Some(k) => {
                assert!(
                    k >= 1 && k <= n_features,
                    "subspace_size {k} out of 1..={n_features}"
                );
                let mut rng = SeededRng::from_master(config.seed, "hoeffding-subspace", 0);
                let mut picked: Vec<usize> = sample_indices(&mut rng, n_features, k)
                    .into_iter()
                    .collect();
                picked.sort_unstable();
                picked
            }
        };
        Self::with_candidates(config, n_features, candidates)
    }

    /// Build with an explicit candidate set (the adaptive forest supplies
    /// per-tree subspaces).
    pub fn with_candidates(
        config: TreeConfig,
        n_features: usize,
        mut candidates: Vec<usize>,
    ) -> Self {
        candidates.sort_unstable();
        candidates.dedup();
        assert!(
            !candidates.is_empty() && *candidates.last().unwrap() < n_features,
            "candidate features out of range"
        );
        Self {
            config,
            n_features,
            root: Node::Leaf(Leaf::new(candidates, [0.0; 2])),
            weight_seen: 0.0,
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Total weighted instances learned.
    pub fn weight_seen(&self) -> f64 {
        self.weight_seen
    }

    fn check_width(&self, x: &[f64]) -> Result<(), TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::WidthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Route to a leaf and return Laplace-smoothed class probabilities; ties
    /// resolve to benign. Never mutates the tree.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, [f64; 2]), TreeError> {
        self.check_width(x)?;
        let mut node = &self.root;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
                Node::Leaf(leaf) => {
                    let probs = leaf.probabilities();
                    let label = Label::from_bool(probs[1] > probs[0]);
                    return Ok((label, probs));
                }
            }
        }
    }

    /// Update the reached leaf with multiplicity `weight`; weight 0 leaves
    /// the tree bit-identical. Split attempts run every
    /// `grace_period` weighted instances at that leaf.
    pub fn learn(&mut self, x: &[f64], label: Label, weight: u64) -> Result<(), TreeError> {
        self.check_width(x)?;
        if weight == 0 {
            return Ok(());
        }
        let weight = weight as f64;
        self.weight_seen += weight;

        let mut node = &mut self.root;
        let mut depth = 0u32;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if x[*feature] <= *threshold {
                left.as_mut()
            } else {
                right.as_mut()
            };
            depth += 1;
        }

        let Node::Leaf(leaf) = node else {
            unreachable!()
        };
        leaf.observe(x, label, weight);

        let depth_allows = self.config.max_depth.is_none_or(|limit| depth < limit);
        if leaf.weight_since_attempt >= self.config.grace_period as f64 && depth_allows {
            leaf.weight_since_attempt = 0.0;
            if let SplitDecision::Split { feature, threshold } = attempt_split(leaf, &self.config) {
                // Children start from the Gaussian-estimated class masses on
                // each side, which redistribute the parent counts exactly.
                let left_counts = leaf.left_weights(feature, threshold);
                let right_counts = [
                    leaf.counts[0] - left_counts[0],
                    leaf.counts[1] - left_counts[1],
                ];
                let candidates = leaf.candidates.clone();
                *node = Node::Split {
                    feature,
                    threshold,
                    left: Box::new(Node::Leaf(Leaf::new(candidates.clone(), left_counts))),
                    right: Box::new(Node::Leaf(Leaf::new(candidates, right_counts))),
                };
            }
        }
        Ok(())
    }

    /// (feature, threshold) of every split node, preorder.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        fn walk(node: &Node, out: &mut Vec<(usize, f64)>) {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = node
            {
                out.push((*feature, *threshold));
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Sum of class counts over all leaves.
    pub fn leaf_count_total(&self) -> f64 {
        fn walk(node: &Node) -> f64 {
            match node {
                Node::Leaf(leaf) => leaf.counts[0] + leaf.counts[1],
                Node::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn walk(node: &Node) -> usize {
            match node {
                Node::Leaf(_) => 1,
                Node::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }
}
