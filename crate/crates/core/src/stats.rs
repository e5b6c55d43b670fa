//! Small statistical helpers shared by the estimators and experiment reports.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Mean and standard error of i.i.d. samples.
///
/// The mean is accumulated around the first sample, so a constant sequence
/// returns that constant exactly and a zero standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub stderr: f64,
    pub count: usize,
}

impl SampleSummary {
    pub fn from_slice(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, std_dev: f64::NAN, stderr: f64::NAN, count };
        }
        let shift = values[0];
        let centered = compensated_sum(values.iter().map(|v| v - shift));
        let mean = shift + centered / count as f64;
        if count == 1 {
            return Self { mean, std_dev: 0.0, stderr: 0.0, count };
        }
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        let std_dev = (ss / (count - 1) as f64).sqrt();
        Self { mean, std_dev, stderr: std_dev / (count as f64).sqrt(), count }
    }
}

/// Binomial proportion with an exact (Clopper-Pearson) confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64, confidence: f64) -> Self {
        let (ci_low, ci_high) = clopper_pearson(successes, trials, confidence);
        let estimate = if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 };
        Self { successes, trials, estimate, ci_low, ci_high, confidence }
    }

    pub fn at_95(successes: u64, trials: u64) -> Self {
        Self::new(successes, trials, 0.95)
    }
}

/// Exact two-sided Clopper-Pearson interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(successes <= trials, "successes exceed trials");
    assert!(confidence > 0.0 && confidence < 1.0);
    if trials == 0 {
        return (0.0, 1.0);
    }
    let alpha = 1.0 - confidence;
    let x = successes as f64;
    let n = trials as f64;
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).expect("valid beta").inverse_cdf(alpha / 2.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).expect("valid beta").inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

/// Standard deviation of a binomial frequency with success probability `p`.
pub fn binomial_sigma(p: f64, trials: u64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = sign * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
