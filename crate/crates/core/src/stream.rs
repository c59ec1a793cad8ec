//! Experiment stream construction: random splits, temporal splits, and
//! label-scarcity masking, all seed-deterministic and replayable from a plan
//! manifest.

use crate::dataset::SnapshotSample;
use crate::rng::SeededRng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("mask fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("{side} side of the split is empty")]
    EmptySide { side: &'static str },
    #[error("evaluation segment is empty")]
    EmptyEvaluation,
    #[error("no samples to split")]
    EmptyInput,
    #[error("sample {0} has no year; enrich or drop unknowns first")]
    UnknownYear(u64),
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("manifest references timestamp {0} absent from the dataset")]
    UnknownTimestamp(u64),
}

/// An ordered experiment stream: a fully labeled pretrain segment and an
/// evaluation segment whose labels are revealed, per trainable flag, only
/// after each prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub description: String,
    /// Seed of the split that produced the plan.
    pub seed: u64,
    /// Masking applied to the evaluation segment, if any.
    pub mask_fraction: Option<f64>,
    pub mask_seed: Option<u64>,
    pub pretrain: Vec<SnapshotSample>,
    pub evaluation: Vec<SnapshotSample>,
}

impl StreamPlan {
    /// Flip every evaluation sample to trainable, turning a frozen comparison
    /// plan into a test-then-train one.
    pub fn with_trainable_evaluation(mut self) -> Self {
        for sample in &mut self.evaluation {
            sample.trainable = true;
        }
        self
    }

    pub fn infected_evaluation_count(&self) -> usize {
        self.evaluation
            .iter()
            .filter(|s| s.label.is_infected())
            .count()
    }

    /// Text manifest: segment timestamp lists plus the seeds and masking
    /// fraction, enough to replay the experiment against the same dataset.
    pub fn write_manifest<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "# driftforest stream plan v1")?;
        writeln!(out, "description={}", self.description)?;
        writeln!(out, "seed={}", self.seed)?;
        if let Some(fraction) = self.mask_fraction {
            writeln!(out, "mask_fraction={fraction}")?;
        }
        if let Some(seed) = self.mask_seed {
            writeln!(out, "mask_seed={seed}")?;
        }
        writeln!(out, "[pretrain]")?;
        for sample in &self.pretrain {
            writeln!(out, "{}", sample.timestamp_id)?;
        }
        writeln!(out, "[evaluation]")?;
        for sample in &self.evaluation {
            writeln!(
                out,
                "{},{}",
                sample.timestamp_id,
                u8::from(sample.trainable)
            )?;
        }
        out.flush()
    }

    /// Rebuild a plan from a manifest and the dataset it was derived from.
    pub fn from_manifest<R: std::io::Read>(
        input: R,
        samples: Vec<SnapshotSample>,
    ) -> Result<StreamPlan, StreamError> {
        let mut by_id: BTreeMap<u64, SnapshotSample> = samples
            .into_iter()
            .map(|sample| (sample.timestamp_id, sample))
            .collect();

        let mut description = String::new();
        let mut seed = 0u64;
        let mut mask_fraction = None;
        let mut mask_seed = None;
        let mut pretrain = Vec::new();
        let mut evaluation = Vec::new();

        #[derive(PartialEq)]
        enum Section {
            Header,
            Pretrain,
            Evaluation,
        }
        let mut section = Section::Header;
        for (idx, line) in std::io::BufReader::new(input).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| StreamError::ManifestParse {
                line: line_no,
                reason: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| StreamError::ManifestParse {
                line: line_no,
                reason: reason.to_string(),
            };
            match trimmed {
                "[pretrain]" => {
                    section = Section::Pretrain;
                    continue;
                }
                "[evaluation]" => {
                    section = Section::Evaluation;
                    continue;
                }
                _ => {}
            }
            match section {
                Section::Header => {
                    let (key, value) = trimmed
                        .split_once('=')
                        .ok_or_else(|| malformed("expected key=value"))?;
                    match key {
                        "description" => description = value.to_string(),
                        "seed" => {
                            seed = value.parse().map_err(|_| malformed("bad seed"))?;
                        }
                        "mask_fraction" => {
                            mask_fraction =
                                Some(value.parse().map_err(|_| malformed("bad fraction"))?);
                        }
                        "mask_seed" => {
                            mask_seed =
                                Some(value.parse().map_err(|_| malformed("bad mask seed"))?);
                        }
                        _ => return Err(malformed("unknown key")),
                    }
                }
                Section::Pretrain => {
                    let id: u64 = trimmed.parse().map_err(|_| malformed("bad timestamp"))?;
                    let mut sample = by_id.remove(&id).ok_or(StreamError::UnknownTimestamp(id))?;
                    sample.trainable = true;
                    pretrain.push(sample);
                }
                Section::Evaluation => {
                    let (id_text, flag_text) = trimmed
                        .split_once(',')
                        .ok_or_else(|| malformed("expected timestamp,trainable"))?;
                    let id: u64 = id_text.parse().map_err(|_| malformed("bad timestamp"))?;
                    let mut sample = by_id.remove(&id).ok_or(StreamError::UnknownTimestamp(id))?;
                    sample.trainable = match flag_text.trim() {
                        "0" => false,
                        "1" => true,
                        _ => return Err(malformed("trainable flag must be 0 or 1")),
                    };
                    evaluation.push(sample);
                }
            }
        }
        Ok(StreamPlan {
            description,
            seed,
            mask_fraction,
            mask_seed,
            pretrain,
            evaluation,
        })
    }
}

fn chronological_key(sample: &SnapshotSample) -> (u32, u64) {
    (sample.year.unwrap_or(0), sample.timestamp_id)
}

/// Seeded uniform shuffle; the first `floor(ratio * N)` samples form the
/// pretrain segment. The remainder becomes the evaluation segment, re-sorted
/// chronologically, with training disabled (the batch-comparison protocol) —
/// use [`StreamPlan::with_trainable_evaluation`] for test-then-train.
pub fn random_split(
    samples: Vec<SnapshotSample>,
    ratio: f64,
    seed: u64,
) -> Result<StreamPlan, StreamError> {
    if samples.is_empty() {
        return Err(StreamError::EmptyInput);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(StreamError::BadRatio(ratio));
    }
    let n = samples.len();
    let cut = (ratio * n as f64).floor() as usize;
    let mut shuffled = samples;
    let mut rng = SeededRng::from_master(seed, "random-split", 0);
    shuffled.shuffle(&mut rng);
    let mut evaluation = shuffled.split_off(cut);
    let mut pretrain = shuffled;
    for sample in &mut pretrain {
        sample.trainable = true;
    }
    evaluation.sort_by_key(chronological_key);
    for sample in &mut evaluation {
        sample.trainable = false;
    }
    Ok(StreamPlan {
        description: format!("random split ratio={ratio}"),
        seed,
        mask_fraction: None,
        mask_seed: None,
        pretrain,
        evaluation,
    })
}

/// Train on years up to and including `pivot_year`, evaluate on everything
/// after, both chronologically ordered. Evaluation samples start trainable.
pub fn temporal_split(
    samples: Vec<SnapshotSample>,
    pivot_year: u32,
) -> Result<StreamPlan, StreamError> {
    if samples.is_empty() {
        return Err(StreamError::EmptyInput);
    }
    if let Some(unknown) = samples.iter().find(|s| s.year.is_none()) {
        return Err(StreamError::UnknownYear(unknown.timestamp_id));
    }
    let mut pretrain = Vec::new();
    let mut evaluation = Vec::new();
    for mut sample in samples {
        sample.trainable = true;
        if sample.year.unwrap_or(0) <= pivot_year {
            pretrain.push(sample);
        } else {
            evaluation.push(sample);
        }
    }
    if pretrain.is_empty() {
        return Err(StreamError::EmptySide { side: "pretrain" });
    }
    if evaluation.is_empty() {
        return Err(StreamError::EmptySide { side: "evaluation" });
    }
    pretrain.sort_by_key(chronological_key);
    evaluation.sort_by_key(chronological_key);
    Ok(StreamPlan {
        description: format!("temporal split pivot_year={pivot_year}"),
        seed: 0,
        mask_fraction: None,
        mask_seed: None,
        pretrain,
        evaluation,
    })
}

/// Keep the label of a seeded selection of `round(fraction * count)` infected
/// evaluation samples trainable and withhold the rest; benign evaluation
/// samples are always trainable. Vectors, labels, and order are untouched.
///
/// The selection is the prefix of one seeded permutation of the infected
/// samples, so sweeps over fractions with the same seed are nested: every
/// label available at a lower fraction stays available at a higher one.
pub fn mask_labels(
    mut plan: StreamPlan,
    fraction: f64,
    seed: u64,
) -> Result<StreamPlan, StreamError> {
    if plan.evaluation.is_empty() {
        return Err(StreamError::EmptyEvaluation);
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(StreamError::BadFraction(fraction));
    }
    let infected: Vec<usize> = plan
        .evaluation
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label.is_infected())
        .map(|(i, _)| i)
        .collect();
    let mut order = infected.clone();
    let mut rng = SeededRng::from_master(seed, "mask-labels", 0);
    order.shuffle(&mut rng);
    // Half-up rounding.
    let keep = (fraction * infected.len() as f64).round() as usize;

    for &idx in &infected {
        plan.evaluation[idx].trainable = false;
    }
    for &idx in order.iter().take(keep) {
        plan.evaluation[idx].trainable = true;
    }
    for sample in &mut plan.evaluation {
        if !sample.label.is_infected() {
            sample.trainable = true;
        }
    }
    plan.mask_fraction = Some(fraction);
    plan.mask_seed = Some(seed);
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use proptest::prelude::*;

    fn sample(ts: u64, year: Option<u32>, label: Label) -> SnapshotSample {
        SnapshotSample {
            timestamp_id: ts,
            vector: vec![ts as f64, -(ts as f64)],
            label,
            year,
            trainable: true,
        }
    }

    fn sized_corpus(n: u64) -> Vec<SnapshotSample> {
        (0..n)
            .map(|i| sample(i, Some(1 + (i % 10) as u32), Label::from_bool(i % 2 == 0)))
            .collect()
    }

    #[test]
    fn random_split_sizes_match_floor_rule() {
        let plan = random_split(sized_corpus(28_213), 0.6, 7).unwrap();
        assert_eq!(plan.pretrain.len(), 16_927);
        assert_eq!(plan.evaluation.len(), 11_286);
        assert!(plan.evaluation.iter().all(|s| !s.trainable));
        assert!(plan.pretrain.iter().all(|s| s.trainable));
    }

    #[test]
    fn random_split_is_seed_deterministic() {
        let a = random_split(sized_corpus(300), 0.6, 42).unwrap();
        let b = random_split(sized_corpus(300), 0.6, 42).unwrap();
        assert_eq!(a, b);

        let c = random_split(sized_corpus(10), 0.6, 1).unwrap();
        let d = random_split(sized_corpus(10), 0.6, 2).unwrap();
        assert_eq!(c.pretrain.len(), d.pretrain.len());
        let ids = |plan: &StreamPlan| -> Vec<u64> {
            plan.pretrain.iter().map(|s| s.timestamp_id).collect()
        };
        assert_ne!(ids(&c), ids(&d), "different seeds picked identical members");
    }

    #[test]
    fn random_split_rejects_bad_ratio() {
        assert_eq!(
            random_split(sized_corpus(5), 0.0, 1).unwrap_err(),
            StreamError::BadRatio(0.0)
        );
        assert_eq!(
            random_split(sized_corpus(5), 1.0, 1).unwrap_err(),
            StreamError::BadRatio(1.0)
        );
        assert_eq!(
            random_split(Vec::new(), 0.5, 1).unwrap_err(),
            StreamError::EmptyInput
        );
    }

    #[test]
    fn temporal_split_partitions_by_pivot() {
        let plan = temporal_split(sized_corpus(100), 1).unwrap();
        assert!(plan.pretrain.iter().all(|s| s.year == Some(1)));
        assert!(plan.evaluation.iter().all(|s| s.year.unwrap() > 1));
        assert!(plan.evaluation.iter().all(|s| s.trainable));

        // Chronological ordering across and within years.
        let keys: Vec<(u32, u64)> = plan
            .evaluation
            .iter()
            .map(|s| (s.year.unwrap(), s.timestamp_id))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn temporal_split_boundaries() {
        assert_eq!(
            temporal_split(sized_corpus(100), 10).unwrap_err(),
            StreamError::EmptySide { side: "evaluation" }
        );
        assert_eq!(
            temporal_split(sized_corpus(100), 0).unwrap_err(),
            StreamError::EmptySide { side: "pretrain" }
        );

        let two = vec![
            sample(0, Some(1), Label::Benign),
            sample(1, Some(2), Label::Infected),
        ];
        let plan = temporal_split(two, 1).unwrap();
        assert_eq!(plan.pretrain.len(), 1);
        assert_eq!(plan.evaluation.len(), 1);
        assert_eq!(plan.evaluation[0].timestamp_id, 1);
    }

    #[test]
    fn temporal_split_requires_years() {
        let mut corpus = sized_corpus(5);
        corpus[3].year = None;
        assert_eq!(
            temporal_split(corpus, 1).unwrap_err(),
            StreamError::UnknownYear(3)
        );
    }

    fn masked_plan(fraction: f64, seed: u64) -> StreamPlan {
        let plan = temporal_split(sized_corpus(100), 1).unwrap();
        mask_labels(plan, fraction, seed).unwrap()
    }

    #[test]
    fn mask_endpoints() {
        let none = masked_plan(0.0, 9);
        assert!(none
            .evaluation
            .iter()
            .filter(|s| s.label.is_infected())
            .all(|s| !s.trainable));
        assert!(none
            .evaluation
            .iter()
            .filter(|s| !s.label.is_infected())
            .all(|s| s.trainable));

        let all = masked_plan(1.0, 9);
        assert!(all.evaluation.iter().all(|s| s.trainable));
    }

    #[test]
    fn mask_selects_exact_rounded_count() {
        // 10 infected evaluation samples at fraction 0.5 -> exactly 5.
        let corpus: Vec<SnapshotSample> = (0..21)
            .map(|i| {
                let year = if i == 0 { 1 } else { 2 };
                sample(i, Some(year), Label::from_bool(i % 2 == 1))
            })
            .collect();
        let plan = temporal_split(corpus, 1).unwrap();
        assert_eq!(plan.infected_evaluation_count(), 10);
        let masked = mask_labels(plan, 0.5, 3).unwrap();
        let trainable_infected = masked
            .evaluation
            .iter()
            .filter(|s| s.label.is_infected() && s.trainable)
            .count();
        assert_eq!(trainable_infected, 5);
    }

    #[test]
    fn mask_rounds_half_up() {
        // 3 infected at fraction 0.5 -> round(1.5) = 2.
        let corpus = vec![
            sample(0, Some(1), Label::Benign),
            sample(1, Some(2), Label::Infected),
            sample(2, Some(2), Label::Infected),
            sample(3, Some(2), Label::Infected),
            sample(4, Some(2), Label::Benign),
        ];
        let masked = mask_labels(temporal_split(corpus, 1).unwrap(), 0.5, 1).unwrap();
        let trainable_infected = masked
            .evaluation
            .iter()
            .filter(|s| s.label.is_infected() && s.trainable)
            .count();
        assert_eq!(trainable_infected, 2);
    }

    #[test]
    fn mask_rejects_bad_fraction() {
        let plan = temporal_split(sized_corpus(100), 1).unwrap();
        assert_eq!(
            mask_labels(plan.clone(), -0.1, 1).unwrap_err(),
            StreamError::BadFraction(-0.1)
        );
        assert_eq!(
            mask_labels(plan, 1.1, 1).unwrap_err(),
            StreamError::BadFraction(1.1)
        );
    }

    #[test]
    fn masks_are_nested_across_fractions() {
        let trainable_ids = |fraction: f64| -> Vec<u64> {
            masked_plan(fraction, 77)
                .evaluation
                .iter()
                .filter(|s| s.label.is_infected() && s.trainable)
                .map(|s| s.timestamp_id)
                .collect()
        };
        let quarter = trainable_ids(0.25);
        let half = trainable_ids(0.5);
        assert!(quarter.iter().all(|id| half.contains(id)));
    }

    #[test]
    fn manifest_round_trip() {
        let masked = masked_plan(0.5, 4);
        let mut buffer = Vec::new();
        masked.write_manifest(&mut buffer).unwrap();
        let rebuilt = StreamPlan::from_manifest(buffer.as_slice(), sized_corpus(100)).unwrap();
        assert_eq!(rebuilt.pretrain.len(), masked.pretrain.len());
        assert_eq!(rebuilt.evaluation.len(), masked.evaluation.len());
        for (a, b) in masked.evaluation.iter().zip(&rebuilt.evaluation) {
            assert_eq!(a.timestamp_id, b.timestamp_id);
            assert_eq!(a.trainable, b.trainable);
        }
        assert_eq!(rebuilt.mask_fraction, Some(0.5));
        assert_eq!(rebuilt.mask_seed, Some(4));
    }

    proptest! {
        #[test]
        fn split_sizes_and_disjointness(n in 1usize..400, ratio in 0.01f64..0.99, seed: u64) {
            let plan = random_split(sized_corpus(n as u64), ratio, seed).unwrap();
            let expected = (ratio * n as f64).floor() as usize;
            prop_assert_eq!(plan.pretrain.len(), expected);
            prop_assert_eq!(plan.pretrain.len() + plan.evaluation.len(), n);
            let mut ids: Vec<u64> = plan
                .pretrain
                .iter()
                .chain(&plan.evaluation)
                .map(|s| s.timestamp_id)
                .collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn mask_touches_only_trainable_flags(fraction in 0.0f64..=1.0, seed: u64) {
            let plan = temporal_split(sized_corpus(60), 1).unwrap();
            let masked = mask_labels(plan.clone(), fraction, seed).unwrap();
            prop_assert_eq!(&masked.pretrain, &plan.pretrain);
            prop_assert_eq!(masked.evaluation.len(), plan.evaluation.len());
            for (a, b) in plan.evaluation.iter().zip(&masked.evaluation) {
                prop_assert_eq!(a.timestamp_id, b.timestamp_id);
                prop_assert_eq!(&a.vector, &b.vector);
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.year, b.year);
            }
            // Same inputs, same seed: bit-identical result.
            let again = mask_labels(plan, fraction, seed).unwrap();
            prop_assert_eq!(masked, again);
        }
    }
}
