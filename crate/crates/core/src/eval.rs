//! Prequential (test-then-train) harness and metric computation.
//!
//! Every evaluation instance is predicted first; only then is its label read
//! — the harness routes all label access through an instrumented stream that
//! stamps a logical clock on each prediction record and first label read, so
//! a violation of the test-then-train order is observable, not assumed.
//! Trainable instances then update adaptive models; frozen batch models are
//! only scored.

use crate::dataset::Label;
use crate::forest::{ForestError, ForestModel};
use crate::rng::fingerprint;
use crate::stream::StreamPlan;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Window length used for the windowed accuracy series.
pub const DEFAULT_WINDOW: usize = 250;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation segment is empty")]
    EmptyEvaluation,
    #[error("confusion counts are empty")]
    EmptyConfusion,
    #[error("reports were scored on different evaluation sequences")]
    SequenceMismatch,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Confusion counts with `infected` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: Label, prediction: Label) {
        match (truth, prediction) {
            (Label::Infected, Label::Infected) => self.true_pos += 1,
            (Label::Benign, Label::Infected) => self.false_pos += 1,
            (Label::Benign, Label::Benign) => self.true_neg += 1,
            (Label::Infected, Label::Benign) => self.false_neg += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// The four headline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Accuracy, precision, recall, and F-measure with the usual zero-division
/// conventions (a metric whose denominator is zero is 0).
pub fn compute_metrics(confusion: &ConfusionCounts) -> Result<MetricSet, EvalError> {
    let total = confusion.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let tp = confusion.true_pos as f64;
    let fp = confusion.false_pos as f64;
    let fn_ = confusion.false_neg as f64;
    let accuracy = (tp + confusion.true_neg as f64) / total as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricSet {
        accuracy,
        precision,
        recall,
        f_measure,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub index: usize,
    /// Instances covered; only the final window may be short.
    pub size: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub truth: Label,
    pub prediction: Label,
    pub trainable: bool,
}

/// Everything a prequential run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
    pub window_size: usize,
    pub windows: Vec<WindowPoint>,
    /// `cumulative[i]` = fraction correct among the first i+1 instances.
    pub cumulative: Vec<f64>,
    pub instances: Vec<InstanceRecord>,
    /// Instances whose label was read before their prediction was recorded.
    /// Zero on every conforming run.
    pub label_order_violations: usize,
}

impl MetricsReport {
    /// Fingerprint of the scored (index, truth) sequence; two reports are
    /// comparable only when these match.
    pub fn sequence_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.instances.len() * 9);
        for record in &self.instances {
            bytes.extend_from_slice(&record.index.to_le_bytes());
            bytes.push(record.truth.index() as u8);
        }
        fingerprint(&bytes)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("accuracy,{}\n", self.metrics.accuracy));
        out.push_str(&format!("precision,{}\n", self.metrics.precision));
        out.push_str(&format!("recall,{}\n", self.metrics.recall));
        out.push_str(&format!("f_measure,{}\n", self.metrics.f_measure));
        out.push_str(&format!("true_pos,{}\n", self.confusion.true_pos));
        out.push_str(&format!("false_pos,{}\n", self.confusion.false_pos));
        out.push_str(&format!("true_neg,{}\n", self.confusion.true_neg));
        out.push_str(&format!("false_neg,{}\n", self.confusion.false_neg));
        out
    }

    /// Write `summary.csv`, `instances.csv`, `windows.csv`, and
    /// `cumulative.csv` under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;

        let mut instances =
            std::io::BufWriter::new(std::fs::File::create(dir.join("instances.csv"))?);
        writeln!(instances, "idx,truth,pred,trainable")?;
        for r in &self.instances {
            writeln!(
                instances,
                "{},{},{},{}",
                r.index,
                r.truth.index(),
                r.prediction.index(),
                u8::from(r.trainable)
            )?;
        }
        instances.flush()?;

        let mut windows = std::io::BufWriter::new(std::fs::File::create(dir.join("windows.csv"))?);
        writeln!(windows, "window_idx,size,accuracy")?;
        for w in &self.windows {
            writeln!(windows, "{},{},{}", w.index, w.size, w.accuracy)?;
        }
        windows.flush()?;

        let mut cumulative =
            std::io::BufWriter::new(std::fs::File::create(dir.join("cumulative.csv"))?);
        writeln!(cumulative, "idx,accuracy")?;
        for (i, a) in self.cumulative.iter().enumerate() {
            writeln!(cumulative, "{i},{a}")?;
        }
        cumulative.flush()?;
        Ok(())
    }

    /// Rebuild a report from a persisted per-instance log.
    pub fn from_instances(
        instances: Vec<InstanceRecord>,
        window_size: usize,
    ) -> Result<MetricsReport, EvalError> {
        if instances.is_empty() {
            return Err(EvalError::EmptyEvaluation);
        }
        let window_size = window_size.max(1);
        let mut confusion = ConfusionCounts::default();
        let mut cumulative = Vec::with_capacity(instances.len());
        let mut correct_so_far = 0usize;
        for (i, record) in instances.iter().enumerate() {
            confusion.record(record.truth, record.prediction);
            if record.truth == record.prediction {
                correct_so_far += 1;
            }
            cumulative.push(correct_so_far as f64 / (i + 1) as f64);
        }
        let windows = instances
            .chunks(window_size)
            .enumerate()
            .map(|(index, chunk)| {
                let correct = chunk.iter().filter(|r| r.truth == r.prediction).count();
                WindowPoint {
                    index,
                    size: chunk.len(),
                    accuracy: correct as f64 / chunk.len() as f64,
                }
            })
            .collect();
        let metrics = compute_metrics(&confusion)?;
        Ok(MetricsReport {
            confusion,
            metrics,
            window_size,
            windows,
            cumulative,
            instances,
            label_order_violations: 0,
        })
    }
}

/// Evaluation stream with instrumented label access. Features and trainable
/// flags are free to read; labels go through [`AuditedStream::label`], which
/// stamps the first read against the prediction stamp on a shared logical
/// clock.
struct AuditedStream<'a> {
    plan: &'a StreamPlan,
    clock: Cell<u64>,
    predicted_at: Vec<Cell<u64>>,
    label_read_at: Vec<Cell<u64>>,
}

impl<'a> AuditedStream<'a> {
    fn new(plan: &'a StreamPlan) -> Self {
        let n = plan.evaluation.len();
        Self {
            plan,
            clock: Cell::new(0),
            predicted_at: vec![Cell::new(0); n],
            label_read_at: vec![Cell::new(0); n],
        }
    }

    fn len(&self) -> usize {
        self.plan.evaluation.len()
    }

    fn tick(&self) -> u64 {
        let next = self.clock.get() + 1;
        self.clock.set(next);
        next
    }

    fn features(&self, i: usize) -> &[f64] {
        &self.plan.evaluation[i].vector
    }

    fn trainable(&self, i: usize) -> bool {
        self.plan.evaluation[i].trainable
    }

    fn record_prediction(&self, i: usize) {
        if self.predicted_at[i].get() == 0 {
            self.predicted_at[i].set(self.tick());
        }
    }

    fn label(&self, i: usize) -> Label {
        if self.label_read_at[i].get() == 0 {
            self.label_read_at[i].set(self.tick());
        }
        self.plan.evaluation[i].label
    }

    /// Instances whose label was read before (or without) a recorded
    /// prediction.
    fn violations(&self) -> usize {
        self.predicted_at
            .iter()
            .zip(&self.label_read_at)
            .filter(|(p, l)| {
                let (p, l) = (p.get(), l.get());
                l != 0 && (p == 0 || l < p)
            })
            .count()
    }
}

/// Run the test-then-train loop over `plan.evaluation`: predict, record the
/// outcome, then learn from the instance iff it is trainable and the model is
/// adaptive. The caller pretrains the model on `plan.pretrain` beforehand.
pub fn prequential_run(
    model: &mut ForestModel,
    plan: &StreamPlan,
    window: usize,
) -> Result<MetricsReport, EvalError> {
    if plan.evaluation.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let window = window.max(1);
    let stream = AuditedStream::new(plan);
    let n = stream.len();

    let mut confusion = ConfusionCounts::default();
    let mut cumulative = Vec::with_capacity(n);
    let mut instances = Vec::with_capacity(n);
    let mut correct_so_far = 0usize;

    for i in 0..n {
        let (prediction, _score) = model.predict(stream.features(i))?;
        stream.record_prediction(i);
        let truth = stream.label(i);
        confusion.record(truth, prediction);
        if truth == prediction {
            correct_so_far += 1;
        }
        cumulative.push(correct_so_far as f64 / (i + 1) as f64);
        instances.push(InstanceRecord {
            index: i,
            truth,
            prediction,
            trainable: stream.trainable(i),
        });
        if stream.trainable(i) && model.is_adaptive() {
            model.learn_one(stream.features(i), truth)?;
        }
    }

    let windows = instances
        .chunks(window)
        .enumerate()
        .map(|(index, chunk)| {
            let correct = chunk.iter().filter(|r| r.truth == r.prediction).count();
            WindowPoint {
                index,
                size: chunk.len(),
                accuracy: correct as f64 / chunk.len() as f64,
            }
        })
        .collect();
    let metrics = compute_metrics(&confusion)?;
    let violations = stream.violations();
    debug_assert_eq!(violations, 0, "label read before prediction");

    Ok(MetricsReport {
        confusion,
        metrics,
        window_size: window,
        windows,
        cumulative,
        instances,
        label_order_violations: violations,
    })
}

/// Which report dominates: at least as good on all four metrics and strictly
/// better on at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    FirstOverSecond,
    SecondOverFirst,
}

#[derive(Debug, Clone)]
pub struct MetricDelta {
    pub name: &'static str,
    pub first: f64,
    pub second: f64,
}

impl MetricDelta {
    pub fn delta(&self) -> f64 {
        self.first - self.second
    }
}

#[derive(Debug, Clone)]
pub struct ReportComparison {
    pub deltas: Vec<MetricDelta>,
    pub dominance: Option<Dominance>,
}

impl std::fmt::Display for ReportComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for d in &self.deltas {
            writeln!(
                f,
                "{}: first={:.6} second={:.6} delta={:+.6}",
                d.name,
                d.first,
                d.second,
                d.delta()
            )?;
        }
        match self.dominance {
            Some(Dominance::FirstOverSecond) => writeln!(f, "dominance: first over second"),
            Some(Dominance::SecondOverFirst) => writeln!(f, "dominance: second over first"),
            None => writeln!(f, "dominance: none"),
        }
    }
}

/// Per-metric deltas and a dominance verdict. Errors unless both reports were
/// scored on the identical evaluation sequence.
pub fn compare_reports(
    first: &MetricsReport,
    second: &MetricsReport,
) -> Result<ReportComparison, EvalError> {
    if first.sequence_hash() != second.sequence_hash() {
        return Err(EvalError::SequenceMismatch);
    }
    let pairs = [
        ("accuracy", first.metrics.accuracy, second.metrics.accuracy),
        (
            "precision",
            first.metrics.precision,
            second.metrics.precision,
        ),
        ("recall", first.metrics.recall, second.metrics.recall),
        (
            "f_measure",
            first.metrics.f_measure,
            second.metrics.f_measure,
        ),
    ];
    let deltas: Vec<MetricDelta> = pairs
        .iter()
        .map(|&(name, first, second)| MetricDelta {
            name,
            first,
            second,
        })
        .collect();
    let first_wins =
        deltas.iter().all(|d| d.first >= d.second) && deltas.iter().any(|d| d.first > d.second);
    let second_wins =
        deltas.iter().all(|d| d.second >= d.first) && deltas.iter().any(|d| d.second > d.first);
    let dominance = match (first_wins, second_wins) {
        (true, false) => Some(Dominance::FirstOverSecond),
        (false, true) => Some(Dominance::SecondOverFirst),
        _ => None,
    };
    Ok(ReportComparison { deltas, dominance })
}

/// Parse an `instances.csv` produced by [`MetricsReport::write_files`].
pub fn read_instances_csv<R: std::io::Read>(input: R) -> Result<Vec<InstanceRecord>, EvalError> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(input);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with("idx")) {
            continue;
        }
        let bad = || {
            EvalError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad instances.csv line {}", idx + 1),
            ))
        };
        let mut fields = trimmed.split(',');
        let index: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let truth: u8 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let prediction: u8 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let trainable: u8 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        records.push(InstanceRecord {
            index,
            truth: Label::from_bool(truth != 0),
            prediction: Label::from_bool(prediction != 0),
            trainable: trainable != 0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{batch_fit, ForestConfig};
    use crate::stream::{random_split, temporal_split};
    use crate::synth::{generate_stream, SynthConfig};

    fn drifting_plan(seed: u64) -> StreamPlan {
        let stream = generate_stream(&SynthConfig {
            n_instances: 1800,
            year_boundaries: vec![600],
            concept_shifts: vec![(1200, 1)],
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        temporal_split(stream, 1).unwrap()
    }

    #[test]
    fn metric_arithmetic_matches_hand_examples() {
        let confusion = ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            true_neg: 5,
            false_neg: 1,
        };
        let m = compute_metrics(&confusion).unwrap();
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.f_measure, 0.75);

        let no_positives = ConfusionCounts {
            true_neg: 10,
            ..ConfusionCounts::default()
        };
        let m = compute_metrics(&no_positives).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f_measure, 0.0);

        let perfect = ConfusionCounts {
            true_pos: 4,
            true_neg: 6,
            ..ConfusionCounts::default()
        };
        let m = compute_metrics(&perfect).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f_measure),
            (1.0, 1.0, 1.0, 1.0)
        );

        assert!(matches!(
            compute_metrics(&ConfusionCounts::default()),
            Err(EvalError::EmptyConfusion)
        ));
    }

    #[test]
    fn windows_cover_the_stream_with_a_short_tail() {
        let plan = drifting_plan(3);
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(1), 64).unwrap();
        model.pretrain(&plan.pretrain).unwrap();
        let report = prequential_run(&mut model, &plan, 250).unwrap();
        // 1200 evaluation instances, window 250 -> 250x4 + 200.
        let sizes: Vec<usize> = report.windows.iter().map(|w| w.size).collect();
        assert_eq!(sizes, vec![250, 250, 250, 250, 200]);
        assert_eq!(report.cumulative.len(), 1200);
        assert_eq!(report.confusion.total(), 1200);
        assert_eq!(report.label_order_violations, 0);
    }

    #[test]
    fn window_weighted_mean_equals_cumulative() {
        let plan = drifting_plan(7);
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(2), 64).unwrap();
        model.pretrain(&plan.pretrain).unwrap();
        let report = prequential_run(&mut model, &plan, 250).unwrap();
        let weighted: f64 = report
            .windows
            .iter()
            .map(|w| w.size as f64 * w.accuracy)
            .sum::<f64>()
            / report.instances.len() as f64;
        let final_cumulative = *report.cumulative.last().unwrap();
        assert!((weighted - final_cumulative).abs() < 1e-12);

        // Confusion totals account for every instance and every infected one.
        let infected = plan.infected_evaluation_count() as u64;
        assert_eq!(
            report.confusion.true_pos + report.confusion.false_neg,
            infected
        );
    }

    #[test]
    fn frozen_model_ignores_trainable_flags() {
        let stream = generate_stream(&SynthConfig {
            n_instances: 1500,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let plan = random_split(stream, 0.6, 9).unwrap();
        let mut model = batch_fit(&plan.pretrain, &ForestConfig::batch(9)).unwrap();
        let frozen = prequential_run(&mut model, &plan, 250).unwrap();
        let trainable_plan = plan.with_trainable_evaluation();
        let trainable = prequential_run(&mut model, &trainable_plan, 250).unwrap();
        assert_eq!(frozen.confusion, trainable.confusion);
        assert_eq!(frozen.cumulative, trainable.cumulative);
    }

    #[test]
    fn cumulative_series_is_exact() {
        let plan = drifting_plan(11);
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(3), 64).unwrap();
        model.pretrain(&plan.pretrain).unwrap();
        let report = prequential_run(&mut model, &plan, 100).unwrap();
        let mut correct = 0usize;
        for (i, r) in report.instances.iter().enumerate() {
            if r.truth == r.prediction {
                correct += 1;
            }
            assert_eq!(report.cumulative[i], correct as f64 / (i + 1) as f64);
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let run = || {
            let plan = drifting_plan(13);
            let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(4), 64).unwrap();
            model.pretrain(&plan.pretrain).unwrap();
            let report = prequential_run(&mut model, &plan, 250).unwrap();
            let mut bytes = report.summary_csv().into_bytes();
            bytes.extend(bincode::serialize(&report).unwrap());
            bytes
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn comparison_requires_identical_sequences() {
        let plan = drifting_plan(17);
        let mut adaptive = ForestModel::new_adaptive(ForestConfig::adaptive(5), 64).unwrap();
        adaptive.pretrain(&plan.pretrain).unwrap();
        let a = prequential_run(&mut adaptive, &plan, 250).unwrap();

        let identical = compare_reports(&a, &a).unwrap();
        assert!(identical.dominance.is_none());
        assert!(identical.deltas.iter().all(|d| d.delta() == 0.0));

        let other_plan = drifting_plan(18);
        let mut other = ForestModel::new_adaptive(ForestConfig::adaptive(5), 64).unwrap();
        other.pretrain(&other_plan.pretrain).unwrap();
        let b = prequential_run(&mut other, &other_plan, 250).unwrap();
        assert!(matches!(
            compare_reports(&a, &b),
            Err(EvalError::SequenceMismatch)
        ));
    }

    #[test]
    fn dominance_verdicts() {
        let base = drifting_plan(19);
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(6), 64).unwrap();
        model.pretrain(&base.pretrain).unwrap();
        let report = prequential_run(&mut model, &base, 250).unwrap();

        // Tamper with copies to force the verdicts.
        let mut better = report.clone();
        better.metrics.accuracy += 0.01;
        better.metrics.precision += 0.01;
        better.metrics.recall += 0.01;
        better.metrics.f_measure += 0.01;
        let cmp = compare_reports(&better, &report).unwrap();
        assert_eq!(cmp.dominance, Some(Dominance::FirstOverSecond));
        let cmp = compare_reports(&report, &better).unwrap();
        assert_eq!(cmp.dominance, Some(Dominance::SecondOverFirst));

        let mut mixed = report.clone();
        mixed.metrics.accuracy += 0.01;
        mixed.metrics.recall -= 0.01;
        let cmp = compare_reports(&mixed, &report).unwrap();
        assert_eq!(cmp.dominance, None);
    }

    #[test]
    fn empty_evaluation_is_rejected() {
        let plan = StreamPlan {
            description: "empty".to_string(),
            seed: 0,
            mask_fraction: None,
            mask_seed: None,
            pretrain: Vec::new(),
            evaluation: Vec::new(),
        };
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(0), 4).unwrap();
        assert!(matches!(
            prequential_run(&mut model, &plan, 250),
            Err(EvalError::EmptyEvaluation)
        ));
    }

    #[test]
    fn report_files_round_trip_through_instances_csv() {
        let plan = drifting_plan(23);
        let mut model = ForestModel::new_adaptive(ForestConfig::adaptive(7), 64).unwrap();
        model.pretrain(&plan.pretrain).unwrap();
        let report = prequential_run(&mut model, &plan, 250).unwrap();

        let dir = tempfile::tempdir().unwrap();
        report.write_files(dir.path()).unwrap();
        let text = std::fs::read(dir.path().join("instances.csv")).unwrap();
        let records = read_instances_csv(text.as_slice()).unwrap();
        let rebuilt = MetricsReport::from_instances(records, 250).unwrap();
        assert_eq!(rebuilt.confusion, report.confusion);
        assert_eq!(rebuilt.metrics, report.metrics);
        assert_eq!(rebuilt.windows, report.windows);
        assert_eq!(rebuilt.cumulative, report.cumulative);
        assert_eq!(rebuilt.sequence_hash(), report.sequence_hash());
    }
}
