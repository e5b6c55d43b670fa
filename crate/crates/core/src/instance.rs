//! Parameter schedules, Haar-random orthonormal frames, the staggered
//! embedding and the nonsmooth max-of-linear baseline.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};
use crate::rng::StreamId;
use crate::stats::binomial_sigma;

/// How the scalar parameters are derived from `(n, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Every constant as in the construction; overrides are ignored.
    PaperExact,
    /// Constants and `gamma` may be overridden for desk-scale dimensions.
    Scaled,
}

impl std::str::FromStr for ScheduleMode {
    type Err = ClbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-exact" | "paper" => Ok(Self::PaperExact),
            "scaled" => Ok(Self::Scaled),
            other => Err(ClbError::InvalidParameter(format!(
                "unknown mode {other:?} (expected paper-exact or scaled)"
            ))),
        }
    }
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PaperExact => "paper-exact",
            Self::Scaled => "scaled",
        })
    }
}

/// Explicit values replacing scheduled quantities (scaled mode only).
///
/// Dependent quantities are derived after the overrides are applied, so
/// overriding `gamma` changes `k`, `rho`, `beta` and `epsilon`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub gamma: Option<f64>,
    /// Replaces the 40 in `gamma = 40 sqrt(ln n / n)`.
    pub gamma_const: Option<f64>,
    /// Replaces the 0.1 in `k = floor((0.1 / gamma)^(2/3))` and `epsilon = 0.1 / sqrt(k)`.
    pub k_const: Option<f64>,
    /// Replaces the 100 in `rho = gamma / (100 alpha ln n)`.
    pub rho_const: Option<f64>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
}

impl ScheduleOverrides {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { gamma: Some(gamma), ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

pub const GAMMA_CONST: f64 = 40.0;
pub const K_CONST: f64 = 0.1;
pub const RHO_CONST: f64 = 100.0;
/// Constant in the concentration event `|<v_i, x>| <= 10 sqrt(ln n / n)`.
pub const HIDING_CONST: f64 = 10.0;
/// Certified upper bound on `min g` is `-OPT_CERT_CONST / sqrt(k)`.
pub const OPT_CERT_CONST: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub n: u64,
    pub p: u32,
    pub k: u64,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub alpha: f64,
    pub radius: f64,
    pub epsilon: f64,
    pub mode: ScheduleMode,
    #[serde(default, skip_serializing_if = "ScheduleOverrides::is_empty")]
    pub overrides: ScheduleOverrides,
}

struct Derived {
    gamma: f64,
    k: u64,
    rho: f64,
    beta: f64,
    alpha: f64,
    epsilon: f64,
}

fn derive(n: u64, p: u32, ov: &ScheduleOverrides) -> Derived {
    let ln_n = (n as f64).ln();
    let gamma_const = ov.gamma_const.unwrap_or(GAMMA_CONST);
    let k_const = ov.k_const.unwrap_or(K_CONST);
    let rho_const = ov.rho_const.unwrap_or(RHO_CONST);
    let gamma = ov.gamma.unwrap_or_else(|| gamma_const * (ln_n / n as f64).sqrt());
    let alpha = ov.alpha.unwrap_or(f64::from(p) + 1.0);
    let k = (k_const / gamma).powf(2.0 / 3.0).floor().max(0.0) as u64;
    let rho = ov.rho.unwrap_or(gamma / (rho_const * alpha * ln_n));
    let beta = ov.beta.unwrap_or(gamma / ln_n);
    let epsilon = if k > 0 { k_const / (k as f64).sqrt() } else { f64::NAN };
    Derived { gamma, k, rho, beta, alpha, epsilon }
}

/// Smallest `n >= 3` whose schedule yields `k >= 1`, if `k` depends on `n` at all.
fn min_viable_n(p: u32, ov: &ScheduleOverrides) -> Option<u64> {
    if ov.gamma.is_some() {
        return None;
    }
    let viable = |n: u64| derive(n, p, ov).k >= 1;
    let mut hi = 4u64;
    while !viable(hi) {
        hi = hi.checked_mul(2)?;
    }
    let mut lo = 3u64;
    if viable(lo) {
        return Some(lo);
    }
    // ln(n)/n is decreasing for n >= 3, so viability is monotone in n.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if viable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Derive all scalar parameters of the construction from `(n, p)`.
pub fn params_schedule(
    n: u64,
    p: u32,
    mode: ScheduleMode,
    overrides: ScheduleOverrides,
) -> Result<InstanceParams> {
    if n < 3 {
        return Err(ClbError::InvalidParameter(format!("n = {n} must be at least 3")));
    }
    if p < 1 {
        return Err(ClbError::InvalidParameter("p must be at least 1".into()));
    }
    let overrides = match mode {
        ScheduleMode::PaperExact => ScheduleOverrides::default(),
        ScheduleMode::Scaled => overrides,
    };
    for (name, v) in [
        ("gamma", overrides.gamma),
        ("gamma_const", overrides.gamma_const),
        ("k_const", overrides.k_const),
        ("rho_const", overrides.rho_const),
        ("alpha", overrides.alpha),
        ("rho", overrides.rho),
        ("beta", overrides.beta),
    ] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(ClbError::InvalidParameter(format!("override {name} = {v} must be positive")));
            }
        }
    }
    let d = derive(n, p, &overrides);
    if d.k < 1 {
        let min_n = min_viable_n(p, &overrides);
        let remedy = match min_n {
            Some(m) => format!("the smallest n with k >= 1 is {m}"),
            None => format!("gamma = {} is fixed; choose gamma <= the k constant", d.gamma),
        };
        return Err(ClbError::EmptyConstruction { n, k: d.k, min_n, remedy });
    }
    if !(d.rho < d.beta && d.beta < d.gamma && d.gamma < 1.0) {
        return Err(ClbError::InvalidParameter(format!(
            "need rho < beta < gamma < 1, got rho = {:e}, beta = {:e}, gamma = {:e}",
            d.rho, d.beta, d.gamma
        )));
    }
    let lhs = d.rho * (1.0 + d.alpha) * (n as f64).ln() + 2.0 * d.beta;
    if lhs >= d.gamma {
        return Err(ClbError::SingleStepInequality { lhs, gamma: d.gamma });
    }
    Ok(InstanceParams {
        n,
        p,
        k: d.k,
        gamma: d.gamma,
        rho: d.rho,
        beta: d.beta,
        alpha: d.alpha,
        radius: 1.0,
        epsilon: d.epsilon,
        mode,
        overrides,
    })
}

impl InstanceParams {
    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn k_usize(&self) -> usize {
        self.k as usize
    }

    pub fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// `n^(-alpha)`, the per-level tie offset scale.
    pub fn tie_offset(&self) -> f64 {
        (-self.alpha * self.ln_n()).exp()
    }

    /// `10 sqrt(ln n / n)`: threshold of the concentration event.
    pub fn hiding_threshold(&self) -> f64 {
        HIDING_CONST * (self.ln_n() / self.n as f64).sqrt()
    }

    /// Certified upper bound `-0.7 / sqrt(k)` on the minimum of `g`.
    pub fn optimum_certificate(&self) -> f64 {
        -OPT_CERT_CONST / (self.k as f64).sqrt()
    }

    /// Value below which a point counts as epsilon-optimal (before MC slack).
    pub fn optimality_threshold(&self) -> f64 {
        self.optimum_certificate() + self.epsilon
    }

    /// Left side of `rho (1 + alpha) ln n + 2 beta < gamma`.
    pub fn singlestep_lhs(&self) -> f64 {
        self.rho * (1.0 + self.alpha) * self.ln_n() + 2.0 * self.beta
    }

    /// Margin of the single-step inequality measured in units of the
    /// standard deviation of `<v_j - v_i, x>` for a uniform unit-ball `x`.
    ///
    /// Large values mean uniform queries almost never reveal a hidden vector.
    pub fn hiding_margin_sigmas(&self) -> f64 {
        let slack = self.gamma
            - 2.0 * self.beta
            - self.rho * ((self.k as f64).ln() + self.alpha * self.ln_n());
        slack / (2.0 / self.n as f64).sqrt()
    }
}

/// `k` orthonormal vectors in `R^n`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalFrame {
    n: usize,
    k: usize,
    seed: u64,
    data: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Draw a unit vector orthogonal to the `rows` already in `previous`.
///
/// Standard Gaussian, then two sweeps of modified Gram-Schmidt.
fn draw_orthonormal(n: usize, previous: &[f64], stream: StreamId) -> Vec<f64> {
    for attempt in 0u64.. {
        let mut rng = if attempt == 0 { stream.rng() } else { stream.index(attempt).rng() };
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _sweep in 0..2 {
            for row in previous.chunks_exact(n) {
                let c = dot(&v, row);
                v.iter_mut().zip(row).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 * (n as f64).sqrt() {
            v.iter_mut().for_each(|a| *a /= nv);
            return v;
        }
    }
    unreachable!()
}

/// Haar-random frame revealed one vector at a time.
///
/// Vector `i` is always drawn from the substream `(seed, i)` against the
/// already revealed prefix, so revealing lazily and sampling the whole frame
/// at once give identical vectors.
#[derive(Debug, Clone)]
pub struct LazyFrame {
    n: usize,
    k: usize,
    seed: u64,
    stream: StreamId,
    data: Vec<f64>,
}

impl LazyFrame {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(ClbError::InvalidParameter(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
        }
        Ok(Self { n, k, seed, stream: StreamId::root(seed).child("frame"), data: Vec::with_capacity(n * k) })
    }

    /// Continue a fixed prefix with fresh vectors from `stream`.
    pub fn from_prefix(prefix: &OrthonormalFrame, k: usize, stream: StreamId) -> Result<Self> {
        if k < prefix.k || k > prefix.n {
            return Err(ClbError::InvalidParameter(format!(
                "cannot extend a {}-vector prefix to k = {k} in n = {}",
                prefix.k, prefix.n
            )));
        }
        Ok(Self { n: prefix.n, k, seed: prefix.seed, stream, data: prefix.data.clone() })
    }

    pub fn revealed(&self) -> usize {
        self.data.len() / self.n
    }

    /// Sample the next vector from the orthogonal complement of the prefix.
    pub fn reveal_next(&mut self) -> Option<&[f64]> {
        let i = self.revealed();
        if i >= self.k {
            return None;
        }
        let v = draw_orthonormal(self.n, &self.data, self.stream.index(i as u64));
        self.data.extend_from_slice(&v);
        Some(&self.data[i * self.n..])
    }

    pub fn reveal_to(&mut self, count: usize) {
        while self.revealed() < count.min(self.k) {
            self.reveal_next();
        }
    }

    /// Revealed prefix as a frame of `revealed()` vectors.
    pub fn prefix(&self) -> OrthonormalFrame {
        OrthonormalFrame { n: self.n, k: self.revealed(), seed: self.seed, data: self.data.clone() }
    }

    pub fn prefix_rows(&self) -> &[f64] {
        &self.data
    }

    pub fn into_frame(mut self) -> OrthonormalFrame {
        self.reveal_to(self.k);
        OrthonormalFrame { n: self.n, k: self.k, seed: self.seed, data: self.data }
    }
}

/// Haar-random orthonormal frame, reproducible from `(n, k, seed)`.
pub fn haar_frame(n: usize, k: usize, seed: u64) -> Result<OrthonormalFrame> {
    Ok(LazyFrame::new(n, k, seed)?.into_frame())
}

/// Uniformly random unit vector in `R^n`.
pub fn random_unit_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|a| *a /= nv);
            return v;
        }
    }
}

impl OrthonormalFrame {
    /// Wrap raw row-major data without checking orthonormality.
    pub fn from_raw(n: usize, k: usize, seed: u64, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k {
            return Err(ClbError::DimensionMismatch { expected: n * k, got: data.len() });
        }
        Ok(Self { n, k, seed, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &[f64] {
        &self.data
    }

    pub fn rows_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Vector `v_i` for `i` in `1..=k`.
    pub fn vector(&self, i: usize) -> &[f64] {
        assert!(i >= 1 && i <= self.k, "vector index {i} outside 1..={}", self.k);
        &self.data[(i - 1) * self.n..i * self.n]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    /// First `t` vectors.
    pub fn prefix(&self, t: usize) -> OrthonormalFrame {
        let t = t.min(self.k);
        Self { n: self.n, k: t, seed: self.seed, data: self.data[..t * self.n].to_vec() }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(ClbError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    /// `(<v_1, x>, ..., <v_k, x>)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.vectors().map(|v| dot(v, x)).collect())
    }

    /// `sum_i coeffs[i] v_{i+1}` for a coefficient prefix of length `<= k`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        assert!(coeffs.len() <= self.k);
        let mut out = vec![0.0; self.n];
        for (c, v) in coeffs.iter().zip(self.vectors()) {
            if *c != 0.0 {
                out.iter_mut().zip(v).for_each(|(o, a)| *o += c * a);
            }
        }
        out
    }

    /// `max_{i,j} |<v_i, v_j> - delta_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors().enumerate() {
            for (j, b) in self.vectors().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }
}

const FRAME_MAGIC: &[u8; 4] = b"CLBF";
pub const FRAME_VERSION: u32 = 1;

/// Write the binary container: magic, version, n, k, seed, then `k*n` f64.
pub fn write_frame<W: Write>(mut w: W, frame: &OrthonormalFrame) -> Result<()> {
    w.write_all(FRAME_MAGIC)?;
    w.write_all(&FRAME_VERSION.to_le_bytes())?;
    w.write_all(&(frame.n as u64).to_le_bytes())?;
    w.write_all(&(frame.k as u64).to_le_bytes())?;
    w.write_all(&frame.seed.to_le_bytes())?;
    let mut buf = Vec::with_capacity(frame.data.len() * 8);
    for v in &frame.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_frame<R: Read>(mut r: R) -> Result<OrthonormalFrame> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FRAME_MAGIC {
        return Err(ClbError::Format(format!("bad frame magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FRAME_VERSION {
        return Err(ClbError::Format(format!("unsupported frame version {version}")));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = next_u64(&mut r)? as usize;
    let k = next_u64(&mut r)? as usize;
    let seed = next_u64(&mut r)?;
    let len = n.checked_mul(k).ok_or_else(|| ClbError::Format("frame size overflows".into()))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ClbError::Format("trailing bytes after frame data".into()));
    }
    OrthonormalFrame::from_raw(n, k, seed, data)
}

/// `(<v_1,x> + (k-1) gamma, <v_2,x> + (k-2) gamma, ..., <v_k,x>)`.
pub fn vec_embed(frame: &OrthonormalFrame, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
    let k = frame.k();
    let mut c = frame.project(x)?;
    for (i, ci) in c.iter_mut().enumerate() {
        *ci += (k - 1 - i) as f64 * gamma;
    }
    Ok(c)
}

/// Index (1-based) of the first maximum.
pub(crate) fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}

/// `max_i <v_i, x> + (k - i) gamma`.
pub fn nemirovski_value(frame: &OrthonormalFrame, gamma: f64, x: &[f64]) -> Result<f64> {
    let c = vec_embed(frame, gamma, x)?;
    Ok(c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Subgradient `v_{i*}` at the lowest maximizing index.
pub fn nemirovski_subgradient(frame: &OrthonormalFrame, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
    let c = vec_embed(frame, gamma, x)?;
    Ok(frame.vector(first_argmax(&c)).to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub c: f64,
    pub trials: u64,
    pub exceedances: u64,
    pub empirical: f64,
    /// `2 exp(-n c^2 / 2)`.
    pub bound: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Empirical `Pr(|<x, v>| >= c)` for a fixed unit `x` and Haar-random unit `v`.
pub fn concentration_check(n: usize, c: f64, trials: u64, stream: StreamId) -> Result<ConcentrationReport> {
    if n == 0 {
        return Err(ClbError::InvalidParameter("n must be positive".into()));
    }
    if c < 0.0 || !c.is_finite() {
        return Err(ClbError::InvalidParameter(format!("threshold c = {c} must be nonnegative")));
    }
    if trials < 1000 {
        return Err(ClbError::InvalidParameter(format!("trials = {trials} must be at least 1000")));
    }
    let bound = 2.0 * (-(n as f64) * c * c / 2.0).exp();
    const CHUNK: u64 = 1024;
    let chunks = trials.div_ceil(CHUNK);
    use rayon::prelude::*;
    let exceedances: u64 = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = stream.index(ci).rng();
            let count = CHUNK.min(trials - ci * CHUNK);
            let mut hits = 0u64;
            for _ in 0..count {
                // x = e_1, so <x, v> is the first coordinate of v.
                let mut first = 0.0;
                let mut sq = 0.0;
                for j in 0..n {
                    let g: f64 = rng.sample(StandardNormal);
                    if j == 0 {
                        first = g;
                    }
                    sq += g * g;
                }
                if (first / sq.sqrt()).abs() >= c {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let empirical = exceedances as f64 / trials as f64;
    let sigma = binomial_sigma(bound.min(1.0), trials);
    Ok(ConcentrationReport {
        n,
        c,
        trials,
        exceedances,
        empirical,
        bound,
        sigma,
        pass: empirical <= bound + 3.0 * sigma,
    })
}
