//! ADWIN change detection over a stream of bounded values.
//!
//! The window is an exponential histogram: level `i` holds buckets of `2^i`
//! elements, at most [`MAX_BUCKETS_PER_LEVEL`] buckets per level, so memory
//! grows logarithmically with the window. After every insertion the window is
//! tested at every bucket boundary; when the two sub-windows' means differ by
//! more than the confidence radius, the older sub-window is dropped and a
//! change is reported.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Buckets kept per exponential-histogram level before two merge upward.
pub const MAX_BUCKETS_PER_LEVEL: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("adwin input {0} outside [0, 1]")]
    DomainError(f64),
    #[error("adwin window is empty")]
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Bucket {
    sum: f64,
    /// Sum of squared deviations within the bucket.
    var: f64,
}

/// ADWIN detector state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adwin {
    delta: f64,
    /// `levels[i]` holds buckets of `2^i` elements, oldest first. All
    /// elements at level i+1 are older than every element at level i.
    levels: Vec<Vec<Bucket>>,
    total: f64,
    /// Sum of squared deviations over the whole window.
    variance_sum: f64,
    width: u64,
    detections: u64,
}

impl Adwin {
    /// `delta` is the detector's confidence parameter, in (0, 1).
    pub fn new(delta: f64) -> Self {
        assert!(
            delta > 0.0 && delta < 1.0,
            "adwin delta out of (0,1): {delta}"
        );
        Self {
            delta,
            levels: vec![Vec::new()],
            total: 0.0,
            variance_sum: 0.0,
            width: 0,
            detections: 0,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Current window length.
    pub fn width(&self) -> u64 {
        self.width
    }

    /// Number of change detections since construction.
    pub fn detections(&self) -> u64 {
        self.detections
    }

    /// Total buckets retained across all levels.
    pub fn bucket_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Mean of the retained window, exact over the compressed bucket sums.
    pub fn mean(&self) -> Result<f64, DriftError> {
        if self.width == 0 {
            Err(DriftError::EmptyWindow)
        } else {
            Ok(self.total / self.width as f64)
        }
    }

    /// Append `value` (must lie in [0, 1]) and test for a distribution
    /// change. Returns true when the older part of the window was dropped.
    pub fn update(&mut self, value: f64) -> Result<bool, DriftError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(DriftError::DomainError(value));
        }
        self.insert(value);
        let mut changed = false;
        while let Some(older) = self.find_cut() {
            self.drop_oldest(older);
            changed = true;
        }
        if changed {
            self.detections += 1;
        }
        Ok(changed)
    }

    fn insert(&mut self, value: f64) {
        if self.width > 0 {
            let w = self.width as f64;
            let mean = self.total / w;
            self.variance_sum += w * (value - mean) * (value - mean) / (w + 1.0);
        }
        self.width += 1;
        self.total += value;
        self.levels[0].push(Bucket {
            sum: value,
            var: 0.0,
        });
        self.compress();
    }

    fn compress(&mut self) {
        let mut level = 0;
        while level < self.levels.len() {
            if self.levels[level].len() > MAX_BUCKETS_PER_LEVEL {
                let a = self.levels[level].remove(0);
                let b = self.levels[level].remove(0);
                let n = (1u64 << level) as f64;
                let mean_a = a.sum / n;
                let mean_b = b.sum / n;
                let merged = Bucket {
                    sum: a.sum + b.sum,
                    var: a.var + b.var + n / 2.0 * (mean_a - mean_b).powi(2),
                };
                if level + 1 == self.levels.len() {
                    self.levels.push(Vec::new());
                }
                self.levels[level + 1].push(merged);
            }
            level += 1;
        }
    }

    /// Scan bucket boundaries oldest to newest; return the element count of
    /// the older sub-window at the first boundary whose mean gap exceeds the
    /// confidence radius.
    fn find_cut(&self) -> Option<u64> {
        if self.width < 2 {
            return None;
        }
        let sigma2 = self.variance_sum / self.width as f64;
        // delta' = delta / width, one test budget per admissible cut.
        let ln_term = (2.0 * self.width as f64 / self.delta).ln();
        let mut older_count = 0u64;
        let mut older_sum = 0.0f64;
        for level in (0..self.levels.len()).rev() {
            let per_bucket = 1u64 << level;
            for bucket in &self.levels[level] {
                older_count += per_bucket;
                older_sum += bucket.sum;
                let newer_count = self.width - older_count;
                if newer_count == 0 {
                    break;
                }
                let mean_gap =
                    older_sum / older_count as f64 - (self.total - older_sum) / newer_count as f64;
                let inv_m = 1.0 / older_count as f64 + 1.0 / newer_count as f64;
                let eps = (2.0 * inv_m * sigma2 * ln_term).sqrt() + 2.0 / 3.0 * inv_m * ln_term;
                if mean_gap.abs() > eps {
                    return Some(older_count);
                }
            }
        }
        None
    }

    /// Remove the oldest `n` elements; `n` is bucket-aligned because it came
    /// from the same oldest-first scan.
    fn drop_oldest(&mut self, mut n: u64) {
        while n > 0 {
            let level = (0..self.levels.len())
                .rev()
                .find(|&l| !self.levels[l].is_empty())
                .expect("drop_oldest on empty window");
            let per_bucket = 1u64 << level;
            debug_assert!(n >= per_bucket, "cut not bucket-aligned");
            let bucket = self.levels[level].remove(0);
            let n_total = self.width as f64;
            let n_rm = per_bucket as f64;
            let n_keep = n_total - n_rm;
            if n_keep > 0.0 {
                let mean_rm = bucket.sum / n_rm;
                let mean_keep = (self.total - bucket.sum) / n_keep;
                self.variance_sum -=
                    bucket.var + n_rm * n_keep / n_total * (mean_rm - mean_keep).powi(2);
                self.variance_sum = self.variance_sum.max(0.0);
            } else {
                self.variance_sum = 0.0;
            }
            self.total -= bucket.sum;
            self.width -= per_bucket;
            n -= per_bucket;
        }
        if self.width == 0 {
            self.total = 0.0;
        }
        while self.levels.len() > 1 && self.levels.last().is_some_and(Vec::is_empty) {
            self.levels.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use rand::Rng;

    fn bernoulli(rng: &mut SeededRng, p: f64) -> f64 {
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }

    fn bucket_bound_holds(adwin: &Adwin) -> bool {
        if adwin.width() == 0 {
            return adwin.bucket_count() == 0 || adwin.bucket_count() <= MAX_BUCKETS_PER_LEVEL;
        }
        let levels_bound = (adwin.width() as f64).log2().ceil() as usize + 1;
        adwin.bucket_count() <= MAX_BUCKETS_PER_LEVEL * levels_bound
    }

    #[test]
    fn constant_stream_never_detects() {
        let mut adwin = Adwin::new(0.002);
        for _ in 0..10_000 {
            assert!(!adwin.update(0.3).unwrap());
            assert!(bucket_bound_holds(&adwin));
        }
        assert_eq!(adwin.width(), 10_000);
        assert_eq!(adwin.detections(), 0);
        assert!((adwin.mean().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut adwin = Adwin::new(0.01);
        assert_eq!(adwin.update(-0.1), Err(DriftError::DomainError(-0.1)));
        assert_eq!(adwin.update(1.5), Err(DriftError::DomainError(1.5)));
        assert!(adwin.update(f64::NAN).is_err());
        assert_eq!(adwin.width(), 0);
    }

    #[test]
    fn mean_is_exact_over_buckets() {
        let mut adwin = Adwin::new(0.01);
        assert_eq!(adwin.mean(), Err(DriftError::EmptyWindow));
        adwin.update(0.7).unwrap();
        assert!((adwin.mean().unwrap() - 0.7).abs() < 1e-15);

        let mut pair = Adwin::new(0.01);
        pair.update(0.0).unwrap();
        pair.update(1.0).unwrap();
        assert!((pair.mean().unwrap() - 0.5).abs() < 1e-15);

        let mut constant = Adwin::new(0.01);
        for _ in 0..100 {
            constant.update(0.25).unwrap();
        }
        assert!((constant.mean().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn detection_shrinks_window() {
        let mut adwin = Adwin::new(0.002);
        let mut rng = SeededRng::from_master(5, "adwin-shrink", 0);
        for _ in 0..500 {
            adwin.update(bernoulli(&mut rng, 0.1)).unwrap();
        }
        let mut detected = false;
        for _ in 0..500 {
            let before = adwin.width();
            if adwin.update(bernoulli(&mut rng, 0.9)).unwrap() {
                assert!(adwin.width() < before);
                detected = true;
                break;
            }
        }
        assert!(detected, "no detection on a 0.1 -> 0.9 shift");
    }

    /// Monte-Carlo reference: a 0.2 -> 0.8 Bernoulli shift must be caught
    /// within 300 post-shift updates in at least 95 of 100 seeded runs.
    #[test]
    fn shift_detected_within_300() {
        let mut hits = 0;
        for run in 0..100u64 {
            let mut adwin = Adwin::new(0.002);
            let mut rng = SeededRng::from_master(run, "adwin-shift", 0);
            for _ in 0..500 {
                adwin.update(bernoulli(&mut rng, 0.2)).unwrap();
            }
            for t in 1..=500 {
                let changed = adwin.update(bernoulli(&mut rng, 0.8)).unwrap();
                assert!(bucket_bound_holds(&adwin));
                if changed {
                    if t <= 300 {
                        hits += 1;
                    }
                    break;
                }
            }
        }
        assert!(hits >= 95, "only {hits}/100 runs detected within 300");
    }

    /// Monte-Carlo reference: stationary streams of 10,000 values produce a
    /// detection in at most 5 of 100 seeded runs at delta = 0.002.
    #[test]
    fn stationary_false_positive_rate() {
        let mut false_detections = 0;
        for run in 0..100u64 {
            let mut adwin = Adwin::new(0.002);
            let mut rng = SeededRng::from_master(run, "adwin-stationary", 0);
            let mut fired = false;
            for _ in 0..10_000 {
                if adwin.update(bernoulli(&mut rng, 0.3)).unwrap() {
                    fired = true;
                }
                debug_assert!(bucket_bound_holds(&adwin));
            }
            assert!(bucket_bound_holds(&adwin));
            if fired {
                false_detections += 1;
            }
        }
        assert!(
            false_detections <= 5,
            "{false_detections}/100 stationary runs false-fired"
        );
    }

    /// Larger shifts are detected no slower than smaller ones, on average.
    #[test]
    fn delay_monotone_in_shift_size() {
        let mean_delay = |post: f64| -> f64 {
            let mut total = 0u64;
            for run in 0..60u64 {
                let mut adwin = Adwin::new(0.002);
                let mut rng = SeededRng::from_master(run, "adwin-delay", 0);
                for _ in 0..500 {
                    adwin.update(bernoulli(&mut rng, 0.2)).unwrap();
                }
                let mut delay = 1500u64;
                for t in 1..=1500u64 {
                    if adwin.update(bernoulli(&mut rng, post)).unwrap() {
                        delay = t;
                        break;
                    }
                }
                total += delay;
            }
            total as f64 / 60.0
        };
        let big = mean_delay(0.8);
        let small = mean_delay(0.5);
        assert!(
            big <= small,
            "delay at 0.2->0.8 ({big}) exceeds delay at 0.2->0.5 ({small})"
        );
    }

    #[test]
    fn serde_round_trip_preserves_state() {
        let mut adwin = Adwin::new(0.01);
        let mut rng = SeededRng::from_master(9, "adwin-serde", 0);
        for _ in 0..1000 {
            adwin.update(bernoulli(&mut rng, 0.4)).unwrap();
        }
        let bytes = bincode::serialize(&adwin).unwrap();
        let mut restored: Adwin = bincode::deserialize(&bytes).unwrap();
        for _ in 0..200 {
            let v = bernoulli(&mut rng, 0.4);
            let a = adwin.update(v).unwrap();
            let b = restored.update(v).unwrap();
            assert_eq!(a, b);
            assert_eq!(adwin.width(), restored.width());
        }
    }
}
