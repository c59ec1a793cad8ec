//! Shared numeric helpers: binary entropy, running Gaussian moments, and the
//! normal CDF/quantile used by the streaming split evaluator.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

/// Entropy in bits of a two-class weight vector. Zero weight contributes
/// nothing; an empty or single-class distribution has entropy 0.
pub fn entropy2(w0: f64, w1: f64) -> f64 {
    let total = w0 + w1;
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for w in [w0, w1] {
        if w > 0.0 {
            let p = w / total;
            h -= p * p.log2();
        }
    }
    h
}

/// Error function, Abramowitz & Stegun 7.1.26 (|error| < 1.5e-7).
pub fn erf(x: f64) -> f64 {
    const A1: f64 = 0.254829592;
    const A2: f64 = -0.284496736;
    const A3: f64 = 1.421413741;
    const A4: f64 = -1.453152027;
    const A5: f64 = 1.061405429;
    const P: f64 = 0.3275911;

    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + P * x);
    let y = 1.0 - (((((A5 * t + A4) * t) + A3) * t + A2) * t + A1) * t * (-x * x).exp();
    sign * y
}

/// CDF of N(mean, std_dev^2). A zero or negative std_dev degenerates to a
/// point mass at `mean`.
pub fn normal_cdf(x: f64, mean: f64, std_dev: f64) -> f64 {
    if std_dev <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    0.5 * (1.0 + erf((x - mean) / (std_dev * SQRT_2)))
}

/// Standard-normal quantile by bisection on [`normal_cdf`]; `p` must lie in
/// (0, 1). Accuracy is limited by the erf approximation (~1e-6 in z).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability out of (0,1): {p}");
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid, 0.0, 1.0) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The ten decile probe positions used for numeric split candidates:
/// standard-normal quantiles at p = i/11, i = 1..=10.
pub fn decile_probes() -> &'static [f64; 10] {
    static PROBES: OnceLock<[f64; 10]> = OnceLock::new();
    PROBES.get_or_init(|| {
        let mut z = [0.0; 10];
        for (i, slot) in z.iter_mut().enumerate() {
            *slot = standard_normal_quantile((i + 1) as f64 / 11.0);
        }
        z
    })
}

/// Weighted running Gaussian moments (Welford update). Learning one value
/// with weight w is identical (to fp rounding) to learning it w times with
/// weight 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    weight: f64,
    mean: f64,
    m2: f64,
}

impl Gaussian {
    pub fn update(&mut self, value: f64, weight: f64) {
        if weight <= 0.0 {
            return;
        }
        let new_weight = self.weight + weight;
        let delta = value - self.mean;
        self.mean += delta * weight / new_weight;
        self.m2 += weight * delta * (value - self.mean);
        self.weight = new_weight;
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance; clamped at zero against fp drift.
    pub fn variance(&self) -> f64 {
        if self.weight <= 0.0 {
            0.0
        } else {
            (self.m2 / self.weight).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Moments of the union of the two populations.
    pub fn merged(&self, other: &Gaussian) -> Gaussian {
        if self.weight <= 0.0 {
            return *other;
        }
        if other.weight <= 0.0 {
            return *self;
        }
        let weight = self.weight + other.weight;
        let mean = (self.weight * self.mean + other.weight * other.mean) / weight;
        let m2 = self.m2
            + other.m2
            + self.weight * (self.mean - mean).powi(2)
            + other.weight * (other.mean - mean).powi(2);
        Gaussian { weight, mean, m2 }
    }
}
