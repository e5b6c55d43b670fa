//! Monte Carlo ball-average smoothing and its nested composition.
//!
//! The nested operator is evaluated as a single expectation over
//! `x + e_1 + ... + e_p` with independent `e_i` uniform in balls of radii
//! `beta/2, ..., beta/2^p`. Samples are drawn in fixed-size chunks, each from
//! its own substream, and reduced in chunk order, so results do not depend on
//! the number of worker threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};
use crate::instance::norm;
use crate::rng::StreamId;
use crate::stats::SampleSummary;

/// Monte Carlo units per chunk; each chunk owns one substream.
pub const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub beta: f64,
    pub p: u32,
    /// Monte Carlo units per query (antithetic pairs when `antithetic` is set).
    pub samples: usize,
    pub stream: StreamId,
    pub antithetic: bool,
}

impl SmoothingConfig {
    pub fn new(beta: f64, p: u32, samples: usize, stream: StreamId) -> Result<Self> {
        let cfg = Self { beta, p, samples, stream, antithetic: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ClbError::InvalidParameter(format!("beta = {} must be positive", self.beta)));
        }
        if self.p < 1 {
            return Err(ClbError::InvalidParameter("nesting depth p must be at least 1".into()));
        }
        if self.samples < 1 {
            return Err(ClbError::InvalidParameter("samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Radius of level `i` (1-based): `beta / 2^i`.
    pub fn radius(&self, i: u32) -> f64 {
        self.beta / 2f64.powi(i as i32)
    }

    pub fn radii(&self) -> Vec<f64> {
        (1..=self.p).map(|i| self.radius(i)).collect()
    }

    /// `(1 - 2^-p) beta`, the largest possible total displacement.
    pub fn support_radius(&self) -> f64 {
        self.radii().iter().sum()
    }

    pub fn with_stream(self, stream: StreamId) -> Self {
        Self { stream, ..self }
    }

    pub fn with_samples(self, samples: usize) -> Self {
        Self { samples, ..self }
    }

    fn chunks(&self) -> usize {
        self.samples.div_ceil(CHUNK)
    }

    fn chunk_len(&self, c: usize) -> usize {
        CHUNK.min(self.samples - c * CHUNK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples_used: usize,
}

impl SmoothedEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, samples_used: 0 }
    }

    fn from_summary(s: SampleSummary) -> Self {
        Self { mean: s.mean, stderr: s.stderr, samples_used: s.count }
    }
}

/// Vector-valued estimate; `stderr` is `sqrt(trace(Cov) / N)`, the standard
/// error of the mean in Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedVector {
    pub mean: Vec<f64>,
    pub stderr: f64,
    pub samples_used: usize,
}

/// Welford accumulator over vectors, merged across chunks with Chan's rule.
#[derive(Debug, Clone)]
pub(crate) struct VecMoments {
    count: usize,
    mean: Vec<f64>,
    m2: f64,
}

impl VecMoments {
    pub(crate) fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: 0.0 }
    }

    pub(crate) fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        let mut m2 = 0.0;
        for (m, &xi) in self.mean.iter_mut().zip(x) {
            let delta = xi - *m;
            *m += delta * inv;
            m2 += delta * (xi - *m);
        }
        self.m2 += m2;
    }

    pub(crate) fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut d2 = 0.0;
        for (m, &mb) in self.mean.iter_mut().zip(&other.mean) {
            let delta = mb - *m;
            d2 += delta * delta;
            *m += delta * nb / n;
        }
        self.m2 += other.m2 + d2 * na * nb / n;
        self.count += other.count;
    }

    pub(crate) fn finish(self) -> SmoothedVector {
        let stderr = if self.count > 1 {
            (self.m2.max(0.0) / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        SmoothedVector { mean: self.mean, stderr, samples_used: self.count }
    }
}

/// Offset uniform in the `n`-ball of radius `eta`.
pub fn ball_offset<R: Rng + ?Sized>(n: usize, eta: f64, rng: &mut R) -> Vec<f64> {
    if eta == 0.0 {
        return vec![0.0; n];
    }
    let mut d = crate::instance::random_unit_vector(n, rng);
    let u: f64 = rng.random();
    let r = eta * u.powf(1.0 / n as f64);
    d.iter_mut().for_each(|a| *a *= r);
    d
}

/// Point uniform in `B_eta(center)`, drawn from `stream`.
pub fn ball_point(center: &[f64], eta: f64, stream: StreamId) -> Result<Vec<f64>> {
    if !(eta >= 0.0) {
        return Err(ClbError::InvalidParameter(format!("eta = {eta} must be nonnegative")));
    }
    if eta == 0.0 {
        return Ok(center.to_vec());
    }
    let mut rng = stream.rng();
    let off = ball_offset(center.len(), eta, &mut rng);
    Ok(center.iter().zip(off).map(|(c, o)| c + o).collect())
}

/// Total displacement `e_1 + ... + e_p` for one sample.
fn nested_offset(n: usize, radii: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for &eta in radii {
        let e = ball_offset(n, eta, rng);
        total.iter_mut().zip(e).for_each(|(t, a)| *t += a);
    }
    total
}

fn displaced(x: &[f64], e: &[f64], sign: f64) -> Vec<f64> {
    x.iter().zip(e).map(|(a, b)| a + sign * b).collect()
}

/// Monte Carlo unit values of `S[f](x)`, in chunk order.
pub fn nested_smooth_samples<F>(f: &F, cfg: &SmoothingConfig, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    cfg.validate()?;
    let radii = cfg.radii();
    let chunks: Vec<Vec<f64>> = (0..cfg.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = cfg.stream.index(c as u64).rng();
            (0..cfg.chunk_len(c))
                .map(|_| {
                    let e = nested_offset(x.len(), &radii, &mut rng);
                    let plus = f(&displaced(x, &e, 1.0));
                    if cfg.antithetic {
                        0.5 * (plus + f(&displaced(x, &e, -1.0)))
                    } else {
                        plus
                    }
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

/// Unbiased estimate of the nested smoothing `S[f](x)`.
pub fn nested_smooth_value<F>(f: &F, cfg: &SmoothingConfig, x: &[f64]) -> Result<SmoothedEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let samples = nested_smooth_samples(f, cfg, x)?;
    Ok(SmoothedEstimate::from_summary(SampleSummary::from_slice(&samples)))
}

/// Average of an a.e. gradient field over the same sampling distribution.
pub fn nested_smooth_grad<G>(grad_f: &G, cfg: &SmoothingConfig, x: &[f64]) -> Result<SmoothedVector>
where
    G: Fn(&[f64]) -> Vec<f64> + Sync + ?Sized,
{
    cfg.validate()?;
    let radii = cfg.radii();
    let n = x.len();
    let parts: Vec<VecMoments> = (0..cfg.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = cfg.stream.index(c as u64).rng();
            let mut acc = VecMoments::new(n);
            for _ in 0..cfg.chunk_len(c) {
                let e = nested_offset(n, &radii, &mut rng);
                let mut g = grad_f(&displaced(x, &e, 1.0));
                if cfg.antithetic {
                    let g2 = grad_f(&displaced(x, &e, -1.0));
                    g.iter_mut().zip(g2).for_each(|(a, b)| *a = 0.5 * (*a + b));
                }
                acc.push(&g);
            }
            acc
        })
        .collect();
    let mut total = VecMoments::new(n);
    for part in &parts {
        total.merge(part);
    }
    Ok(total.finish())
}

/// Draws the projection `V e` of one nested ball displacement onto an
/// orthonormal `k`-frame in `R^n`, without touching `n` coordinates.
///
/// The first `k` coordinates of a uniform point in the `n`-ball are the first
/// `k` coordinates of a uniform point on the unit sphere in `R^(n+2)`, which
/// is `z / sqrt(|z|^2 + chi2)` with `z ~ N(0, I_k)` and `chi2` chi-squared
/// with `n + 2 - k` degrees of freedom.
#[derive(Debug, Clone)]
pub struct RidgeSampler {
    k: usize,
    radii: Vec<f64>,
    chi2: ChiSquared<f64>,
}

impl RidgeSampler {
    pub fn new(n: usize, k: usize, radii: Vec<f64>) -> Result<Self> {
        if k == 0 || k > n {
            return Err(ClbError::InvalidParameter(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
        }
        let dof = (n + 2 - k) as f64;
        let chi2 = ChiSquared::new(dof).map_err(|e| ClbError::InvalidParameter(e.to_string()))?;
        Ok(Self { k, radii, chi2 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Writes one displacement projection into `out` (length `k`).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut z = vec![0.0; self.k];
        for &eta in &self.radii {
            let mut zz = 0.0;
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
                zz += *zi * *zi;
            }
            let rest = self.chi2.sample(rng);
            let scale = eta / (zz + rest).sqrt();
            out.iter_mut().zip(&z).for_each(|(o, zi)| *o += scale * zi);
        }
    }
}

/// Result of smoothing a ridge function `x -> phi(V x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeEstimate {
    pub value: SmoothedEstimate,
    /// Smoothed gradient of `phi` in frame coordinates (length `k`).
    pub coord_grad: SmoothedVector,
    /// Largest tag returned by `phi` over all evaluations.
    pub max_tag: usize,
}

/// Nested smoothing of `phi(V x)` given the projection `c = V x`.
///
/// `phi(u, grad)` returns the value at `u`, writes its gradient into `grad`
/// and returns an integer tag (used for the active branch index).
pub fn ridge_smooth<F>(
    sampler: &RidgeSampler,
    cfg: &SmoothingConfig,
    c: &[f64],
    phi: &F,
) -> Result<RidgeEstimate>
where
    F: Fn(&[f64], &mut [f64]) -> (f64, usize) + Sync + ?Sized,
{
    cfg.validate()?;
    let k = sampler.k();
    if c.len() != k {
        return Err(ClbError::DimensionMismatch { expected: k, got: c.len() });
    }
    let parts: Vec<(Vec<f64>, VecMoments, usize)> = (0..cfg.chunks())
        .into_par_iter()
        .map(|ci| {
            let mut rng = cfg.stream.index(ci as u64).rng();
            let len = cfg.chunk_len(ci);
            let mut values = Vec::with_capacity(len);
            let mut grads = VecMoments::new(k);
            let mut tag = 0;
            let mut m = vec![0.0; k];
            let mut u = vec![0.0; k];
            let mut g = vec![0.0; k];
            let mut g2 = vec![0.0; k];
            for _ in 0..len {
                sampler.draw(&mut rng, &mut m);
                u.iter_mut().zip(c.iter().zip(&m)).for_each(|(ui, (ci, mi))| *ui = ci + mi);
                let (v1, t1) = phi(&u, &mut g);
                tag = tag.max(t1);
                if cfg.antithetic {
                    u.iter_mut().zip(c.iter().zip(&m)).for_each(|(ui, (ci, mi))| *ui = ci - mi);
                    let (v2, t2) = phi(&u, &mut g2);
                    tag = tag.max(t2);
                    values.push(0.5 * (v1 + v2));
                    g.iter_mut().zip(&g2).for_each(|(a, b)| *a = 0.5 * (*a + b));
                } else {
                    values.push(v1);
                }
                grads.push(&g);
            }
            (values, grads, tag)
        })
        .collect();
    let mut values = Vec::with_capacity(cfg.samples);
    let mut grads = VecMoments::new(k);
    let mut max_tag = 0;
    for (v, g, t) in &parts {
        values.extend_from_slice(v);
        grads.merge(g);
        max_tag = max_tag.max(*t);
    }
    Ok(RidgeEstimate {
        value: SmoothedEstimate::from_summary(SampleSummary::from_slice(&values)),
        coord_grad: grads.finish(),
        max_tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub status: CheckStatus,
    /// Worst observed statistic (meaning depends on the property).
    pub worst: f64,
    /// Tolerance the statistic was compared against.
    pub tolerance: f64,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: &str, ok: bool, worst: f64, tolerance: f64, detail: String) -> Self {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.into(), status, worst, tolerance, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub checks: Vec<PropertyCheck>,
}

impl SmoothingReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks linearity, locality, approximation, convexity and the gradient
/// Lipschitz bound of `S[f]` at the given points.
///
/// `f` must be `lipschitz`-Lipschitz near the points. The convexity check is
/// only run when `convex` is set.
pub fn smoothing_property_suite<F>(
    f: &F,
    lipschitz: f64,
    convex: bool,
    cfg: &SmoothingConfig,
    trial_points: &[Vec<f64>],
) -> Result<SmoothingReport>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    cfg.validate()?;
    if trial_points.is_empty() {
        return Err(ClbError::InvalidParameter("no trial points".into()));
    }
    let n = trial_points[0].len();
    let mut checks = Vec::new();

    // Linearity: S[f + l] = S[f] + S[l] sample by sample for a fixed linear l.
    let a = crate::instance::random_unit_vector(n, &mut cfg.stream.child("suite-linear").rng());
    let lin = |y: &[f64]| y.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>();
    let sum_f = |y: &[f64]| f(y) + lin(y);
    let mut worst = 0.0f64;
    for x in trial_points {
        let sf = nested_smooth_samples(f, cfg, x)?;
        let sl = nested_smooth_samples(&lin, cfg, x)?;
        let ss = nested_smooth_samples(&sum_f, cfg, x)?;
        for ((u, v), w) in sf.iter().zip(&sl).zip(&ss) {
            let scale = 1.0 + u.abs() + v.abs();
            worst = worst.max((w - u - v).abs() / scale);
        }
    }
    checks.push(PropertyCheck::new(
        "linearity",
        worst <= 1e-12,
        worst,
        1e-12,
        "per-sample relative defect of S[f + l] - S[f] - S[l]".into(),
    ));

    // Locality: changing f outside the support radius changes nothing.
    let reach = cfg.support_radius() * (1.0 + 1e-9) + 1e-12;
    let mut identical = true;
    for x in trial_points {
        let far = |y: &[f64]| {
            let d: f64 = y.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            if d > reach {
                f(y) + 1e3
            } else {
                f(y)
            }
        };
        let e1 = nested_smooth_value(f, cfg, x)?;
        let e2 = nested_smooth_value(&far, cfg, x)?;
        identical &= e1.mean.to_bits() == e2.mean.to_bits() && e1.stderr.to_bits() == e2.stderr.to_bits();
    }
    checks.push(PropertyCheck::new(
        "locality",
        identical,
        if identical { 0.0 } else { 1.0 },
        0.0,
        format!("f modified beyond radius {reach:e}; estimates must be bitwise identical"),
    ));

    // Approximation: |S[f](x) - f(x)| <= beta G.
    let bound = cfg.beta * lipschitz;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_gap = 0.0f64;
    let mut max_se = 0.0f64;
    for x in trial_points {
        let est = nested_smooth_value(f, cfg, x)?;
        let gap = (est.mean - f(x)).abs();
        worst_gap = worst_gap.max(gap);
        max_se = max_se.max(est.stderr);
        worst_excess = worst_excess.max(gap - bound - 3.0 * est.stderr);
    }
    let mut approx = PropertyCheck::new(
        "approximation",
        worst_excess <= 0.0,
        worst_gap,
        bound,
        format!("max |S[f] - f| against beta*G with 3 stderr slack (max stderr {max_se:e})"),
    );
    if approx.status == CheckStatus::Pass && 3.0 * max_se > bound {
        approx.status = CheckStatus::Inconclusive;
    }
    checks.push(approx);

    // Convexity: midpoint inequality on consecutive pairs of trial points.
    if convex && trial_points.len() >= 2 {
        let mut violations = 0usize;
        let mut pairs = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for w in trial_points.windows(2) {
            let mid: Vec<f64> = w[0].iter().zip(&w[1]).map(|(u, v)| 0.5 * (u + v)).collect();
            let e0 = nested_smooth_value(f, cfg, &w[0])?;
            let e1 = nested_smooth_value(f, cfg, &w[1])?;
            let em = nested_smooth_value(f, cfg, &mid)?;
            let slack = 5.0 * (em.stderr.powi(2) + 0.25 * (e0.stderr.powi(2) + e1.stderr.powi(2))).sqrt();
            let excess = em.mean - 0.5 * (e0.mean + e1.mean);
            worst = worst.max(excess - slack);
            if excess > slack {
                violations += 1;
            }
            pairs += 1;
        }
        let allowed = pairs / 100;
        checks.push(PropertyCheck::new(
            "convexity",
            violations <= allowed,
            worst,
            0.0,
            format!("{violations} of {pairs} midpoint violations beyond 5 stderr (allowed {allowed})"),
        ));
    }

    // Gradient Lipschitz: directional derivative differences of S[f] under
    // common random numbers, against n 2^1 G / beta.
    if trial_points.len() >= 2 {
        let h = cfg.beta * 1e-3;
        let dir = crate::instance::random_unit_vector(n, &mut cfg.stream.child("suite-dir").rng());
        let dd = |x: &[f64]| -> Result<f64> {
            let xp = displaced(x, &dir, h);
            let xm = displaced(x, &dir, -h);
            Ok((nested_smooth_value(f, cfg, &xp)?.mean - nested_smooth_value(f, cfg, &xm)?.mean) / (2.0 * h))
        };
        let bound = n as f64 * 2.0 * lipschitz / cfg.beta;
        let mut worst = 0.0f64;
        for w in trial_points.windows(2) {
            let dist = norm(&displaced(&w[0], &w[1], -1.0));
            if dist > 0.0 {
                worst = worst.max((dd(&w[0])? - dd(&w[1])?).abs() / dist);
            }
        }
        checks.push(PropertyCheck::new(
            "gradient-lipschitz",
            worst <= bound,
            worst,
            bound,
            "empirical directional-derivative Lipschitz ratio against 2 n G / beta".into(),
        ));
    }

    Ok(SmoothingReport { checks })
}
