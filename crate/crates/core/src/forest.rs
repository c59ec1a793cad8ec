//! The two classifiers: a frozen batch random forest and an incrementally
//! updated adaptive random forest.
//!
//! Batch trees are grown greedily on seeded bootstraps with a fresh random
//! feature subspace per node and frozen after fitting. Adaptive trees are
//! Hoeffding trees over fixed per-tree subspaces, trained by online bagging
//! (Poisson-weighted instances); each carries a warning and a drift detector
//! fed with its pre-update error. A warning starts a background tree in the
//! shadow of the warned one, a confirmed drift replaces the foreground tree
//! with its background (or a fresh tree), so the ensemble size never changes.

use crate::dataset::{Label, SnapshotSample};
use crate::drift::{Adwin, DriftError};
use crate::hoeffding::{HoeffdingTree, TreeConfig, TreeError};
use crate::rng::SeededRng;
use crate::stats::entropy2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

const MODEL_MAGIC: &[u8; 4] = b"DFMD";
/// Bump when the serialized layout changes.
pub const MODEL_FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("cannot fit on an empty training set")]
    EmptyTraining,
    #[error("operation requires {expected:?} mode")]
    WrongMode { expected: ForestMode },
    #[error("instance width {got} does not match training width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("model file version {found}, expected {expected}")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Drift(#[from] DriftError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestMode {
    Batch,
    Adaptive,
}

/// Shared configuration for both forest flavors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Poisson rate for online bagging.
    pub lambda: f64,
    /// Features per tree (adaptive) or per node (batch); `None` uses
    /// `round(sqrt(n_features))`.
    pub subspace_size: Option<usize>,
    pub warning_delta: f64,
    pub drift_delta: f64,
    pub seed: u64,
    pub mode: ForestMode,
    /// Base-learner settings for adaptive trees.
    pub tree: TreeConfig,
    /// Batch splits must leave at least this many samples per side.
    pub min_samples_leaf: usize,
    /// Predictions counted toward each adaptive tree's vote weight.
    pub weight_window: usize,
}

impl ForestConfig {
    pub fn batch(seed: u64) -> Self {
        Self {
            n_trees: 10,
            lambda: 6.0,
            subspace_size: None,
            warning_delta: 0.01,
            drift_delta: 0.001,
            seed,
            mode: ForestMode::Batch,
            tree: TreeConfig::default(),
            min_samples_leaf: 2,
            weight_window: 200,
        }
    }

    pub fn adaptive(seed: u64) -> Self {
        Self {
            mode: ForestMode::Adaptive,
            // Base learners split far more eagerly than a standalone
            // streaming tree; replacements keep overgrown trees in check.
            tree: TreeConfig {
                split_confidence: 0.01,
                ..TreeConfig::default()
            },
            ..Self::batch(seed)
        }
    }

    fn subspace(&self, n_features: usize) -> usize {
        let k = self
            .subspace_size
            .unwrap_or_else(|| (n_features as f64).sqrt().round() as usize);
        k.clamp(1, n_features)
    }

    fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::CorruptPayload(
                "n_trees must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Normalized weighted vote: mean of per-tree p(infected) under the given
/// weights, and the label it implies (ties at 0.5 go benign).
pub fn weighted_score(votes: &[(f64, f64)]) -> (Label, f64) {
    let weight_total: f64 = votes.iter().map(|(w, _)| w).sum();
    let score = if weight_total <= 0.0 {
        0.5
    } else {
        votes.iter().map(|(w, p)| w * p).sum::<f64>() / weight_total
    };
    (Label::from_bool(score > 0.5), score)
}

// ---------------------------------------------------------------------------
// Batch forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum BatchNode {
    Leaf {
        counts: [f64; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<BatchNode>,
        right: Box<BatchNode>,
    },
}

impl BatchNode {
    fn probability_infected(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                BatchNode::Leaf { counts } => {
                    let total = counts[0] + counts[1];
                    return if total <= 0.0 { 0.5 } else { counts[1] / total };
                }
                BatchNode::Split {
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
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchForest {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<BatchNode>,
    degenerate_class: Option<Label>,
}

struct BatchBuilder<'a> {
    samples: &'a [SnapshotSample],
    n_features: usize,
    subspace: usize,
    min_leaf: usize,
}

impl BatchBuilder<'_> {
    fn tally(&self, indices: &[usize]) -> [f64; 2] {
        let mut counts = [0.0; 2];
        for &i in indices {
            counts[self.samples[i].label.index()] += 1.0;
        }
        counts
    }

    fn build(&self, indices: &[usize], rng: &mut SeededRng) -> BatchNode {
        let counts = self.tally(indices);
        if counts[0] == 0.0 || counts[1] == 0.0 || indices.len() < 2 * self.min_leaf {
            return BatchNode::Leaf { counts };
        }
        let parent = entropy2(counts[0], counts[1]);
        let n = indices.len() as f64;

        let mut subspace: Vec<usize> = sample_indices(rng, self.n_features, self.subspace)
            .into_iter()
            .collect();
        subspace.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = indices.to_vec();
        for &feature in &subspace {
            sorted.sort_by(|&a, &b| {
                self.samples[a].vector[feature].total_cmp(&self.samples[b].vector[feature])
            });
            let mut left = [0.0f64; 2];
            for boundary in 0..sorted.len() - 1 {
                left[self.samples[sorted[boundary]].label.index()] += 1.0;
                let lo = self.samples[sorted[boundary]].vector[feature];
                let hi = self.samples[sorted[boundary + 1]].vector[feature];
                if lo == hi {
                    continue;
                }
                let on_left = boundary + 1;
                if on_left < self.min_leaf || sorted.len() - on_left < self.min_leaf {
                    continue;
                }
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let wl = on_left as f64;
                let gain = parent
                    - wl / n * entropy2(left[0], left[1])
                    - (n - wl) / n * entropy2(right[0], right[1]);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, threshold));
                }
            }
        }

        let Some((gain, feature, threshold)) = best else {
            return BatchNode::Leaf { counts };
        };
        if gain <= 1e-12 {
            return BatchNode::Leaf { counts };
        }
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.samples[i].vector[feature] <= threshold);
        if left_idx.is_empty() || right_idx.is_empty() {
            return BatchNode::Leaf { counts };
        }
        BatchNode::Split {
            feature,
            threshold,
            left: Box::new(self.build(&left_idx, rng)),
            right: Box::new(self.build(&right_idx, rng)),
        }
    }
}

/// Fit a frozen batch random forest: `n_trees` greedy trees, each on a seeded
/// bootstrap, with a fresh random feature subspace at every node.
///
/// A single-class training set is accepted; the model then predicts that
/// class always and reports it through [`ForestModel::degenerate_class`].
pub fn batch_fit(
    samples: &[SnapshotSample],
    config: &ForestConfig,
) -> Result<ForestModel, ForestError> {
    config.validate()?;
    if config.mode != ForestMode::Batch {
        return Err(ForestError::WrongMode {
            expected: ForestMode::Batch,
        });
    }
    if samples.is_empty() {
        return Err(ForestError::EmptyTraining);
    }
    let n_features = samples[0].vector.len();
    for sample in samples {
        if sample.vector.len() != n_features {
            return Err(ForestError::WidthMismatch {
                expected: n_features,
                got: sample.vector.len(),
            });
        }
    }
    let mut class_seen = [false; 2];
    for sample in samples {
        class_seen[sample.label.index()] = true;
    }
    let degenerate_class = match class_seen {
        [true, false] => Some(Label::Benign),
        [false, true] => Some(Label::Infected),
        _ => None,
    };

    let builder = BatchBuilder {
        samples,
        n_features,
        subspace: config.subspace(n_features),
        min_leaf: config.min_samples_leaf.max(1),
    };
    let n = samples.len();
    let trees = (0..config.n_trees)
        .map(|i| {
            let mut rng = SeededRng::from_master(config.seed, "batch-tree", i as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            builder.build(&bootstrap, &mut rng)
        })
        .collect();

    Ok(ForestModel::Batch(BatchForest {
        config: config.clone(),
        n_features,
        trees,
        degenerate_class,
    }))
}

// ---------------------------------------------------------------------------
// Adaptive forest
// ---------------------------------------------------------------------------

/// Correctness of the tree's most recent predictions; its accuracy is the
/// tree's vote weight, floored at 0.01. A tree with no history weighs 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecentWindow {
    window: VecDeque<bool>,
    correct: usize,
    capacity: usize,
}

impl RecentWindow {
    fn new(capacity: usize) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity.max(1)),
            correct: 0,
            capacity: capacity.max(1),
        }
    }

    fn push(&mut self, correct: bool) {
        if self.window.len() == self.capacity && self.window.pop_front() == Some(true) {
            self.correct -= 1;
        }
        self.window.push_back(correct);
        if correct {
            self.correct += 1;
        }
    }

    fn weight(&self) -> f64 {
        if self.window.is_empty() {
            1.0
        } else {
            (self.correct as f64 / self.window.len() as f64).max(0.01)
        }
    }

    fn reset(&mut self) {
        self.window.clear();
        self.correct = 0;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeSlot {
    tree: HoeffdingTree,
    rng: SeededRng,
    warning: Adwin,
    drift: Adwin,
    recent: RecentWindow,
    background: Option<HoeffdingTree>,
    replacements: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveForest {
    config: ForestConfig,
    n_features: usize,
    slots: Vec<TreeSlot>,
    warnings_total: u64,
}

impl AdaptiveForest {
    pub fn new(config: ForestConfig, n_features: usize) -> Result<Self, ForestError> {
        config.validate()?;
        if config.mode != ForestMode::Adaptive {
            return Err(ForestError::WrongMode {
                expected: ForestMode::Adaptive,
            });
        }
        let slots = (0..config.n_trees)
            .map(|i| {
                let mut rng = SeededRng::from_master(config.seed, "arf-tree", i as u64);
                let tree = fresh_tree(&config, n_features, &mut rng);
                TreeSlot {
                    tree,
                    rng,
                    warning: Adwin::new(config.warning_delta),
                    drift: Adwin::new(config.drift_delta),
                    recent: RecentWindow::new(config.weight_window),
                    background: None,
                    replacements: 0,
                }
            })
            .collect();
        Ok(Self {
            config,
            n_features,
            slots,
            warnings_total: 0,
        })
    }

    fn check_width(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::WidthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<(Label, f64), ForestError> {
        self.check_width(x)?;
        let votes: Vec<(f64, f64)> = self
            .slots
            .iter()
            .map(|slot| {
                let (_, probs) = slot.tree.predict(x)?;
                Ok((slot.recent.weight(), probs[1]))
            })
            .collect::<Result<_, TreeError>>()?;
        Ok(weighted_score(&votes))
    }

    /// One test-then-train step: every tree predicts, its pre-update error
    /// feeds its detectors (a detector event counts only when the detector's
    /// retained error mean rose), then the tree and its background learn the
    /// instance with a Poisson-drawn weight.
    fn learn_one(&mut self, x: &[f64], label: Label) -> Result<(), ForestError> {
        self.check_width(x)?;
        let poisson = Poisson::new(self.config.lambda)
            .map_err(|e| ForestError::CorruptPayload(format!("bad lambda: {e}")))?;
        for slot in &mut self.slots {
            let (prediction, _) = slot.tree.predict(x)?;
            let error = prediction != label;
            slot.recent.push(!error);

            let warning_fired = feed_detector(&mut slot.warning, error);
            let drift_fired = feed_detector(&mut slot.drift, error);
            if drift_fired {
                slot.tree = match slot.background.take() {
                    Some(background) => background,
                    None => fresh_tree(&self.config, self.n_features, &mut slot.rng),
                };
                slot.warning = Adwin::new(self.config.warning_delta);
                slot.drift = Adwin::new(self.config.drift_delta);
                slot.recent.reset();
                slot.replacements += 1;
            } else if warning_fired && slot.background.is_none() {
                slot.background = Some(fresh_tree(&self.config, self.n_features, &mut slot.rng));
                self.warnings_total += 1;
            }

            let weight = poisson.sample(&mut slot.rng) as u64;
            if weight > 0 {
                slot.tree.learn(x, label, weight)?;
                if let Some(background) = &mut slot.background {
                    background.learn(x, label, weight)?;
                }
            }
        }
        Ok(())
    }

    pub fn replacements_per_tree(&self) -> Vec<u64> {
        self.slots.iter().map(|slot| slot.replacements).collect()
    }
}

fn fresh_tree(config: &ForestConfig, n_features: usize, rng: &mut SeededRng) -> HoeffdingTree {
    let k = config.subspace(n_features);
    let mut candidates: Vec<usize> = sample_indices(rng, n_features, k).into_iter().collect();
    candidates.sort_unstable();
    HoeffdingTree::with_candidates(config.tree.clone(), n_features, candidates)
}

/// Feed one error indicator; report a change only when the detector both cut
/// its window and now estimates a higher error than before the cut.
fn feed_detector(adwin: &mut Adwin, error: bool) -> bool {
    let before = adwin.mean().unwrap_or(0.0);
    let cut = adwin
        .update(if error { 1.0 } else { 0.0 })
        .expect("error indicator is 0 or 1");
    cut && adwin.mean().is_ok_and(|after| after > before)
}

// ---------------------------------------------------------------------------
// Unified model
// ---------------------------------------------------------------------------

/// Either a frozen batch random forest or an adaptive random forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ForestModel {
    Batch(BatchForest),
    Adaptive(AdaptiveForest),
}

impl ForestModel {
    pub fn new_adaptive(config: ForestConfig, n_features: usize) -> Result<Self, ForestError> {
        Ok(ForestModel::Adaptive(AdaptiveForest::new(
            config, n_features,
        )?))
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, ForestModel::Adaptive(_))
    }

    pub fn n_features(&self) -> usize {
        match self {
            ForestModel::Batch(forest) => forest.n_features,
            ForestModel::Adaptive(forest) => forest.n_features,
        }
    }

    pub fn config(&self) -> &ForestConfig {
        match self {
            ForestModel::Batch(forest) => &forest.config,
            ForestModel::Adaptive(forest) => &forest.config,
        }
    }

    pub fn n_trees(&self) -> usize {
        match self {
            ForestModel::Batch(forest) => forest.trees.len(),
            ForestModel::Adaptive(forest) => forest.slots.len(),
        }
    }

    /// Single-class batch fits predict that class always.
    pub fn degenerate_class(&self) -> Option<Label> {
        match self {
            ForestModel::Batch(forest) => forest.degenerate_class,
            ForestModel::Adaptive(_) => None,
        }
    }

    /// Weight-normalized mean of per-tree p(infected); infected iff the
    /// score strictly exceeds 0.5. Batch trees vote with equal weight.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64), ForestError> {
        match self {
            ForestModel::Batch(forest) => {
                if x.len() != forest.n_features {
                    return Err(ForestError::WidthMismatch {
                        expected: forest.n_features,
                        got: x.len(),
                    });
                }
                let votes: Vec<(f64, f64)> = forest
                    .trees
                    .iter()
                    .map(|tree| (1.0, tree.probability_infected(x)))
                    .collect();
                Ok(weighted_score(&votes))
            }
            ForestModel::Adaptive(forest) => forest.predict(x),
        }
    }

    /// Adaptive-only incremental update.
    pub fn learn_one(&mut self, x: &[f64], label: Label) -> Result<(), ForestError> {
        match self {
            ForestModel::Batch(_) => Err(ForestError::WrongMode {
                expected: ForestMode::Adaptive,
            }),
            ForestModel::Adaptive(forest) => forest.learn_one(x, label),
        }
    }

    /// Apply [`ForestModel::learn_one`] over `samples` in order.
    pub fn pretrain(&mut self, samples: &[SnapshotSample]) -> Result<(), ForestError> {
        for sample in samples {
            self.learn_one(&sample.vector, sample.label)?;
        }
        Ok(())
    }

    pub fn replacements_total(&self) -> u64 {
        match self {
            ForestModel::Batch(_) => 0,
            ForestModel::Adaptive(forest) => forest.slots.iter().map(|s| s.replacements).sum(),
        }
    }

    pub fn warnings_total(&self) -> u64 {
        match self {
            ForestModel::Batch(_) => 0,
            ForestModel::Adaptive(forest) => forest.warnings_total,
        }
    }

    /// Versioned model file bytes: magic, format version, then the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MODEL_MAGIC);
        bytes.push(MODEL_FORMAT_VERSION);
        bincode::serialize_into(&mut bytes, self).expect("model serialization");
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ForestModel, ForestError> {
        if bytes.len() < MODEL_MAGIC.len() + 1 || &bytes[..4] != MODEL_MAGIC {
            return Err(ForestError::CorruptPayload(
                "missing model header".to_string(),
            ));
        }
        let version = bytes[4];
        if version != MODEL_FORMAT_VERSION {
            return Err(ForestError::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let payload = &bytes[5..];
        let mut cursor = std::io::Cursor::new(payload);
        let model: ForestModel = bincode::deserialize_from(&mut cursor)
            .map_err(|e| ForestError::CorruptPayload(e.to_string()))?;
        if cursor.position() != payload.len() as u64 {
            return Err(ForestError::CorruptPayload(
                "trailing bytes after payload".to_string(),
            ));
        }
        Ok(model)
    }
}
