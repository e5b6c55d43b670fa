//! The smoothed softmax tower: `f_i`, `h_t = max_{j<=t} f_j`, `g_t = S[h_t]`,
//! its Monte Carlo `p`-th order oracle, and the predicates deciding when
//! oracles at different levels answer identically.
//!
//! `h_t(x)` depends on `x` only through the frame coordinates `c = vec_V(x)`,
//! so the oracle smooths in those `k` coordinates (see [`RidgeSampler`]).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};
use crate::instance::{
    haar_frame, norm, random_unit_vector, read_frame, write_frame, InstanceParams,
    OrthonormalFrame, ScheduleMode, ScheduleOverrides,
};
use crate::rng::StreamId;
use crate::smoothing::{
    ball_offset, ridge_smooth, RidgeSampler, SmoothedEstimate, SmoothedVector, SmoothingConfig,
};
use crate::softmax::smax_prefix;

/// Relative slack on the unit-ball domain check.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HardInstance {
    params: InstanceParams,
    /// All `k` vectors, or a revealed prefix for partially informed oracles.
    frame: OrthonormalFrame,
    smoothing: SmoothingConfig,
    sampler: RidgeSampler,
    tie: f64,
}

/// Stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Running `(max, sum exp((u - max) / rho))`.
#[derive(Clone, Copy)]
struct Lse {
    m: f64,
    s: f64,
}

impl Lse {
    const EMPTY: Self = Self { m: f64::NEG_INFINITY, s: 0.0 };

    fn push(&mut self, u: f64, rho: f64) {
        if u > self.m {
            self.s = self.s * ((self.m - u) / rho).exp() + 1.0;
            self.m = u;
        } else {
            self.s += ((u - self.m) / rho).exp();
        }
    }

    fn merge(&mut self, o: Self, rho: f64) {
        if o.s == 0.0 {
            return;
        }
        if o.m > self.m {
            self.s = self.s * ((self.m - o.m) / rho).exp() + o.s;
            self.m = o.m;
        } else {
            self.s += o.s * ((o.m - self.m) / rho).exp();
        }
    }
}

/// Scalar parameters of the branch scan.
#[derive(Debug, Clone, Copy)]
pub struct TowerShape {
    pub k: usize,
    pub rho: f64,
    /// `n^(-alpha)`.
    pub tie: f64,
}

impl TowerShape {
    /// Index of the first maximizer of `f_j` over `j <= t`, given staggered
    /// coordinates `u = vec_V(y)` (only `u[..t]` is read).
    ///
    /// `f_j > f_b` exactly when `ln(1 + sum_{b<i<=j} e^{u_i/rho} / sum_{i<=b} e^{u_i/rho}) > (j-b) n^-alpha`;
    /// the left side is evaluated from the tail segment so the tiny offsets
    /// are never lost against the magnitude of the values.
    pub fn branch(&self, u: &[f64], t: usize) -> usize {
        let rho = self.rho;
        let mut best = 1;
        let mut prefix = Lse::EMPTY;
        prefix.push(u[0], rho);
        let mut seg = Lse::EMPTY;
        for j in 2..=t {
            seg.push(u[j - 1], rho);
            let lt = (seg.m - prefix.m) / rho + (seg.s / prefix.s).ln();
            if softplus(lt) > (j - best) as f64 * self.tie {
                prefix.merge(seg, rho);
                seg = Lse::EMPTY;
                best = j;
            }
        }
        best
    }

    /// `f_j(y)` as a function of `u[..j]` alone; writes softmax weights into `grad`.
    pub fn eval_branch(&self, u: &[f64], j: usize, grad: Option<&mut [f64]>) -> f64 {
        let rho = self.rho;
        let m = u[..j].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = u[..j].iter().map(|&ui| ((ui - m) / rho).exp()).sum();
        if let Some(g) = grad {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = if i < j { ((u[i] - m) / rho).exp() / s } else { 0.0 };
            }
        }
        let offset = rho * (self.k - j) as f64 * self.tie;
        m + rho * s.ln() + offset
    }

    /// `h_t` at `u`: value, gradient weights and active branch.
    pub fn eval(&self, u: &[f64], t: usize, grad: Option<&mut [f64]>) -> (f64, usize) {
        let j = self.branch(u, t);
        (self.eval_branch(u, j, grad), j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalProbe {
    pub order: u32,
    pub direction: Vec<f64>,
    /// Estimate of `D^order g(x)[d, ..., d]`.
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub value: SmoothedEstimate,
    pub grad: Option<SmoothedVector>,
    pub hessian_probe: Option<Vec<DirectionalProbe>>,
    pub higher_probes: Vec<DirectionalProbe>,
    pub order: u32,
    pub level: usize,
    /// Largest active branch index over every evaluation of `h_t`.
    pub max_branch: usize,
}

impl OracleResponse {
    /// Bitwise equality of everything the caller observes.
    pub fn same_answer(&self, other: &Self) -> bool {
        fn bits(v: &[f64]) -> Vec<u64> {
            v.iter().map(|x| x.to_bits()).collect()
        }
        let same_est = |a: &SmoothedEstimate, b: &SmoothedEstimate| {
            a.mean.to_bits() == b.mean.to_bits() && a.stderr.to_bits() == b.stderr.to_bits()
        };
        let same_probes = |a: &[DirectionalProbe], b: &[DirectionalProbe]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(p, q)| {
                    p.estimate.to_bits() == q.estimate.to_bits() && p.stderr.to_bits() == q.stderr.to_bits()
                })
        };
        same_est(&self.value, &other.value)
            && match (&self.grad, &other.grad) {
                (Some(a), Some(b)) => bits(&a.mean) == bits(&b.mean) && a.stderr.to_bits() == b.stderr.to_bits(),
                (None, None) => true,
                _ => false,
            }
            && match (&self.hessian_probe, &other.hessian_probe) {
                (Some(a), Some(b)) => same_probes(a, b),
                (None, None) => true,
                _ => false,
            }
            && same_probes(&self.higher_probes, &other.higher_probes)
    }
}

/// Outcome of the branch-stability predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Stability {
    /// Certified: `h = h_{t+1}` on the whole ball.
    Stable,
    /// A point of the ball where `h != h_{t+1}`.
    Unstable { witness: Vec<f64> },
    /// No certificate, but every probe agreed.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStability {
    /// `max_{i>t} |<v_i, x>| <= 10 sqrt(ln n / n)`.
    pub concentration_event: bool,
    pub max_hidden_inner: f64,
    /// Worst-case bound over the ball certifies `f_{t+1} >= f_j` for all `j > t+1`.
    pub certified: bool,
    pub probes: usize,
    pub probes_agree: bool,
    pub verdict: Stability,
}

impl BranchStability {
    pub fn stable(&self) -> bool {
        self.verdict == Stability::Stable
    }

    pub fn witness(&self) -> Option<&[f64]> {
        match &self.verdict {
            Stability::Unstable { witness } => Some(witness),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumWitness {
    pub x_star: Vec<f64>,
    /// `rho ln k - 1/sqrt(k) + k gamma + k n^-alpha`, bounding every `f_i(x*)`.
    pub analytic_f_bound: f64,
    /// `-0.7 / sqrt(k)`, bounding `g(x*)`.
    pub certificate: f64,
    /// Exact `h(x*)`.
    pub h_value: f64,
    pub g_estimate: SmoothedEstimate,
}

/// How `lipschitz_probe` chooses pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSampling {
    /// Independent uniform points of the unit ball.
    UniformBall,
    /// Pairs straddling a softmax transition between adjacent frame vectors,
    /// where the curvature of `h` concentrates.
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub order: u32,
    pub pairs: usize,
    pub sampling: PairSampling,
    /// Largest observed `|D(x) - D(y)| / |x - y|`.
    pub empirical: f64,
    /// `k^(3 order / 2) (ln k)^order`.
    pub scaling: f64,
    /// `empirical / scaling`; reported, never asserted.
    pub fitted_constant: f64,
}

impl HardInstance {
    /// Instance with a Haar frame drawn from `seed`.
    pub fn generate(params: InstanceParams, seed: u64, mc_samples: usize) -> Result<Self> {
        let frame = haar_frame(params.dim(), params.k_usize(), seed)?;
        let smoothing = SmoothingConfig::new(
            params.beta,
            params.p,
            mc_samples,
            StreamId::root(seed).child("smoothing"),
        )?;
        Self::from_parts(params, frame, smoothing)
    }

    /// Instance over a given frame, which may be a prefix of `k` vectors.
    pub fn from_parts(params: InstanceParams, frame: OrthonormalFrame, smoothing: SmoothingConfig) -> Result<Self> {
        if frame.n() != params.dim() {
            return Err(ClbError::DimensionMismatch { expected: params.dim(), got: frame.n() });
        }
        if frame.k() == 0 || frame.k() > params.k_usize() {
            return Err(ClbError::InvalidParameter(format!(
                "frame has {} vectors, instance needs between 1 and k = {}",
                frame.k(),
                params.k
            )));
        }
        if smoothing.beta != params.beta || smoothing.p != params.p {
            return Err(ClbError::InvalidParameter("smoothing radius/depth must match the instance".into()));
        }
        let sampler = RidgeSampler::new(params.dim(), params.k_usize(), smoothing.radii())?;
        let tie = params.tie_offset();
        Ok(Self { params, frame, smoothing, sampler, tie })
    }

    pub fn params(&self) -> &InstanceParams {
        &self.params
    }

    pub fn frame(&self) -> &OrthonormalFrame {
        &self.frame
    }

    pub fn smoothing(&self) -> &SmoothingConfig {
        &self.smoothing
    }

    pub fn k(&self) -> usize {
        self.params.k_usize()
    }

    pub fn n(&self) -> usize {
        self.params.dim()
    }

    /// Number of frame vectors this instance knows.
    pub fn known(&self) -> usize {
        self.frame.k()
    }

    pub fn is_complete(&self) -> bool {
        self.known() == self.k()
    }

    pub fn shape(&self) -> TowerShape {
        TowerShape { k: self.k(), rho: self.params.rho, tie: self.tie }
    }

    pub fn with_samples(&self, samples: usize) -> Self {
        Self { smoothing: self.smoothing.with_samples(samples), ..self.clone() }
    }

    /// Same instance with a different frame (for example a fresh hidden suffix).
    pub fn with_frame(&self, frame: OrthonormalFrame) -> Result<Self> {
        Self::from_parts(self.params.clone(), frame, self.smoothing)
    }

    /// Substream of the oracle for query `index` of `round`.
    pub fn query_stream(&self, round: u64, index: u64) -> StreamId {
        self.smoothing.stream.child("query").index(round).index(index)
    }

    fn check_level(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.known() {
            return Err(ClbError::IndexOutOfRange { index: t, max: self.known() });
        }
        Ok(())
    }

    /// Staggered coordinates of `x` for the known vectors; unknown ones are 0.
    pub fn coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.k();
        self.frame.check_dim(x)?;
        let mut c = vec![0.0; k];
        for (i, (ci, v)) in c.iter_mut().zip(self.frame.vectors()).enumerate() {
            *ci = v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + (k - 1 - i) as f64 * self.params.gamma;
        }
        Ok(c)
    }

    /// `f_i(x) = smax^{<=i}(vec_V(x)) + rho (k - i) n^-alpha`.
    pub fn f_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_level(i)?;
        let c = self.coords(x)?;
        Ok(smax_prefix(self.params.rho, i, &c)? + self.params.rho * (self.k() - i) as f64 * self.tie)
    }

    /// `h_t(x)` and the lowest maximizing index.
    pub fn h_value(&self, t: usize, x: &[f64]) -> Result<(f64, usize)> {
        self.check_level(t)?;
        let c = self.coords(x)?;
        Ok(self.shape().eval(&c, t, None))
    }

    /// Gradient of `f_{j*}` at the lowest maximizing index `j*`.
    pub fn h_subgrad(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_level(t)?;
        let c = self.coords(x)?;
        let mut w = vec![0.0; self.k()];
        self.shape().eval(&c, t, Some(&mut w));
        Ok(self.frame.combine(&w[..self.known()]))
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        self.frame.check_dim(x)?;
        let r = norm(x);
        if r > self.params.radius * (1.0 + DOMAIN_SLACK) {
            return Err(ClbError::OutsideDomain { norm: r, radius: self.params.radius });
        }
        Ok(())
    }

    /// Oracle for `g_t = S[h_t]` up to derivative `order`, drawing its Monte
    /// Carlo samples from `stream`. Order-2 and higher derivatives are served
    /// as directional probes along `directions` (one random direction if empty).
    pub fn oracle_query(
        &self,
        t: usize,
        x: &[f64],
        order: u32,
        stream: StreamId,
        directions: &[Vec<f64>],
    ) -> Result<OracleResponse> {
        self.check_level(t)?;
        self.check_domain(x)?;
        if order > self.params.p {
            return Err(ClbError::InvalidParameter(format!(
                "order {order} exceeds the instance order p = {}",
                self.params.p
            )));
        }
        let shape = self.shape();
        let cfg = self.smoothing.with_stream(stream);
        let c = self.coords(x)?;
        let phi = |u: &[f64], g: &mut [f64]| shape.eval(u, t, Some(g));
        let base = ridge_smooth(&self.sampler, &cfg, &c, &phi)?;
        let mut max_branch = base.max_tag;
        let grad = (order >= 1).then(|| SmoothedVector {
            mean: self.frame.combine(&base.coord_grad.mean[..self.known()]),
            stderr: base.coord_grad.stderr,
            samples_used: base.coord_grad.samples_used,
        });

        let mut hessian_probe = None;
        let mut higher_probes = Vec::new();
        if order >= 2 {
            let dirs: Vec<Vec<f64>> = if directions.is_empty() {
                vec![random_unit_vector(self.n(), &mut stream.child("probe-direction").rng())]
            } else {
                directions.to_vec()
            };
            let mut second = Vec::new();
            for d in &dirs {
                self.frame.check_dim(d)?;
                let dn = norm(d);
                if dn == 0.0 {
                    return Err(ClbError::InvalidParameter("zero probe direction".into()));
                }
                let unit: Vec<f64> = d.iter().map(|a| a / dn).collect();
                for q in 2..=order {
                    let (probe, tag) = self.directional_probe(t, &c, &unit, q, &cfg)?;
                    max_branch = max_branch.max(tag);
                    if q == 2 {
                        second.push(probe);
                    } else {
                        higher_probes.push(probe);
                    }
                }
            }
            hessian_probe = Some(second);
        }
        Ok(OracleResponse {
            value: base.value,
            grad,
            hessian_probe,
            higher_probes,
            order,
            level: t,
            max_branch,
        })
    }

    /// Central finite difference of order `q - 1` of `s -> <grad h(u + s Vd), Vd>`,
    /// averaged over the same ridge samples as the value.
    fn directional_probe(
        &self,
        t: usize,
        c: &[f64],
        unit: &[f64],
        q: u32,
        cfg: &SmoothingConfig,
    ) -> Result<(DirectionalProbe, usize)> {
        let shape = self.shape();
        let k = self.k();
        let mut dv = vec![0.0; k];
        for (dvi, v) in dv.iter_mut().zip(self.frame.vectors()) {
            *dvi = v.iter().zip(unit).map(|(a, b)| a * b).sum();
        }
        let m = (q - 1) as i32;
        let step = self.params.rho / 8.0;
        // Binomial stencil at offsets (m/2 - i) * step.
        let stencil: Vec<(f64, f64)> = (0..=m)
            .map(|i| {
                let binom = (0..i).fold(1.0, |acc, r| acc * f64::from(m - r) / f64::from(r + 1));
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                (sign * binom, (f64::from(m) / 2.0 - f64::from(i)) * step)
            })
            .collect();
        let scale = step.powi(m);
        let phi = |u: &[f64], g: &mut [f64]| {
            let mut w = vec![0.0; k];
            let mut y = vec![0.0; k];
            let mut acc = 0.0;
            let mut tag = 0;
            for &(coef, off) in &stencil {
                y.iter_mut().zip(u.iter().zip(&dv)).for_each(|(yi, (ui, di))| *yi = ui + off * di);
                let (_, j) = shape.eval(&y, t, Some(&mut w));
                tag = tag.max(j);
                acc += coef * w.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>();
            }
            g.iter_mut().for_each(|gi| *gi = 0.0);
            (acc / scale, tag)
        };
        let est = ridge_smooth(&self.sampler, cfg, c, &phi)?;
        Ok((
            DirectionalProbe { order: q, direction: unit.to_vec(), estimate: est.value.mean, stderr: est.value.stderr },
            est.max_tag,
        ))
    }

    /// Whether `h = h_{t+1}` on `B_beta(x)`: concentration event, a rigorous
    /// worst-case certificate, and `probe_count` sampled points plus the
    /// worst-case corners `x + beta (v_j - v_{t+1}) / sqrt 2`.
    pub fn branch_stable(&self, t: usize, x: &[f64], probe_count: usize, stream: StreamId) -> Result<BranchStability> {
        if !self.is_complete() {
            return Err(ClbError::InvalidParameter("branch stability needs the full frame".into()));
        }
        let k = self.k();
        if t >= k {
            return Err(ClbError::IndexOutOfRange { index: t, max: k - 1 });
        }
        self.frame.check_dim(x)?;
        let shape = self.shape();
        let proj = self.frame.project(x)?;
        let max_hidden_inner = proj[t..].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let concentration_event = max_hidden_inner <= self.params.hiding_threshold();
        let level = t + 1;
        let c = self.coords(x)?;
        let beta = self.params.beta;
        let rho = self.params.rho;

        // For y in the ball, u_l(y) - u_m(y) <= u_l(x) - u_m(x) + sqrt(2) beta, so
        // sum_{l=t+2}^{j} e^{(u_l - u_m)/rho} with m the largest of u_{<=t+1}
        // bounds the ratio inside ln(1 + .) uniformly.
        let m_idx = (0..level).max_by(|&a, &b| c[a].total_cmp(&c[b]).then(b.cmp(&a))).unwrap_or(0);
        let lift = 2f64.sqrt() * beta / rho;
        let mut tail = Lse::EMPTY;
        let mut certified = true;
        for j in level + 1..=k {
            tail.push(c[j - 1], rho);
            let lt = (tail.m - c[m_idx]) / rho + tail.s.ln() + lift;
            if softplus(lt) > (j - level) as f64 * self.tie {
                certified = false;
                break;
            }
        }

        let mut witness = None;
        let check = |y: &[f64]| -> Result<bool> {
            let cy = self.coords(y)?;
            Ok(shape.branch(&cy, k) <= level)
        };
        for j in level + 1..=k {
            let mut y = x.to_vec();
            let a = self.frame.vector(j);
            let b = self.frame.vector(level);
            let s = beta / 2f64.sqrt();
            y.iter_mut().zip(a.iter().zip(b)).for_each(|(yi, (ai, bi))| *yi += s * (ai - bi));
            if !check(&y)? {
                witness = Some(y);
                break;
            }
        }
        if witness.is_none() {
            let mut rng = stream.rng();
            for _ in 0..probe_count {
                let e = ball_offset(self.n(), beta, &mut rng);
                let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
                if !check(&y)? {
                    witness = Some(y);
                    break;
                }
            }
        }
        let probes_agree = witness.is_none();
        let verdict = match witness {
            Some(w) => Stability::Unstable { witness: w },
            None if certified => Stability::Stable,
            None => Stability::Undetermined,
        };
        Ok(BranchStability {
            concentration_event,
            max_hidden_inner,
            certified,
            probes: probe_count + k - level,
            probes_agree,
            verdict,
        })
    }

    /// `x* = -(1/sqrt k) sum v_i` with its analytic bounds and an MC estimate of `g(x*)`.
    pub fn optimum_witness(&self, stream: StreamId) -> Result<OptimumWitness> {
        if !self.is_complete() {
            return Err(ClbError::InvalidParameter("the optimum witness needs the full frame".into()));
        }
        let k = self.k();
        let kf = k as f64;
        let coeffs = vec![-1.0 / kf.sqrt(); k];
        let x_star = self.frame.combine(&coeffs);
        let p = &self.params;
        let analytic_f_bound = p.rho * kf.ln() - 1.0 / kf.sqrt() + kf * p.gamma + kf * self.tie;
        let (h_value, _) = self.h_value(k, &x_star)?;
        let g_estimate = self.oracle_query(k, &x_star, 0, stream, &[])?.value;
        Ok(OptimumWitness { x_star, analytic_f_bound, certificate: p.optimum_certificate(), h_value, g_estimate })
    }

    fn transition_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let k = self.k();
        let p = &self.params;
        let a = rng.random_range(1..k);
        let b = a + 1;
        let mut s = vec![-0.2; k];
        s[a - 1] = -p.gamma;
        s[b - 1] = 0.0;
        for si in s.iter_mut() {
            *si += rng.random_range(-2.0..2.0) * p.rho;
        }
        let x = self.frame.combine(&s);
        let r = rng.random_range(0.5..2.0) * p.rho;
        let mut dir = vec![0.0; k];
        dir[a - 1] = std::f64::consts::FRAC_1_SQRT_2;
        dir[b - 1] = -std::f64::consts::FRAC_1_SQRT_2;
        let step = self.frame.combine(&dir);
        let y = x.iter().zip(&step).map(|(xi, di)| xi + r * di).collect();
        (x, y)
    }

    fn uniform_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        (ball_offset(self.n(), 1.0, rng), ball_offset(self.n(), 1.0, rng))
    }

    /// Largest observed Lipschitz ratio of the order-`order` derivative of
    /// `g`, using common random numbers within each pair.
    pub fn lipschitz_probe(
        &self,
        order: u32,
        pair_count: usize,
        sampling: PairSampling,
        stream: StreamId,
    ) -> Result<LipschitzReport> {
        if !(order == 1 || order == 2) {
            return Err(ClbError::InvalidParameter(format!("lipschitz_probe supports order 1 or 2, got {order}")));
        }
        if order > self.params.p {
            return Err(ClbError::InvalidParameter(format!("order {order} exceeds p = {}", self.params.p)));
        }
        let k = self.k();
        let mut rng = stream.child("pairs").rng();
        let mut empirical = 0.0f64;
        for i in 0..pair_count {
            let (x, y) = if sampling == PairSampling::Transition && k >= 2 {
                self.transition_pair(&mut rng)
            } else {
                self.uniform_pair(&mut rng)
            };
            let dist = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dist == 0.0 {
                continue;
            }
            let qs = stream.index(i as u64);
            let ratio = if order == 1 {
                let gx = self.oracle_query(k, &x, 1, qs, &[])?.grad.expect("order 1 has a gradient");
                let gy = self.oracle_query(k, &y, 1, qs, &[])?.grad.expect("order 1 has a gradient");
                let diff: Vec<f64> = gx.mean.iter().zip(&gy.mean).map(|(a, b)| a - b).collect();
                norm(&diff) / dist
            } else {
                let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| (a - b) / dist).collect();
                let hx = self.oracle_query(k, &x, 2, qs, std::slice::from_ref(&d))?;
                let hy = self.oracle_query(k, &y, 2, qs, std::slice::from_ref(&d))?;
                let ex = hx.hessian_probe.expect("order 2 has probes")[0].estimate;
                let ey = hy.hessian_probe.expect("order 2 has probes")[0].estimate;
                (ex - ey).abs() / dist
            };
            empirical = empirical.max(ratio);
        }
        let kf = k as f64;
        let o = f64::from(order);
        let scaling = kf.powf(1.5 * o) * kf.ln().powf(o);
        let fitted_constant = if scaling > 0.0 { empirical / scaling } else { f64::NAN };
        Ok(LipschitzReport { order, pairs: pair_count, sampling, empirical, scaling, fitted_constant })
    }
}

/// Structured description of a generated instance; the frame itself is
/// stored separately in the binary container named by `frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescriptor {
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
    pub seed: u64,
    pub mc_samples: usize,
    pub frame: String,
}

impl InstanceDescriptor {
    pub fn new(inst: &HardInstance, seed: u64, frame_file: &str) -> Self {
        let p = inst.params();
        Self {
            n: p.n,
            p: p.p,
            k: p.k,
            gamma: p.gamma,
            rho: p.rho,
            beta: p.beta,
            alpha: p.alpha,
            radius: p.radius,
            epsilon: p.epsilon,
            mode: p.mode,
            overrides: p.overrides,
            seed,
            mc_samples: inst.smoothing().samples,
            frame: frame_file.to_string(),
        }
    }

    pub fn params(&self) -> InstanceParams {
        InstanceParams {
            n: self.n,
            p: self.p,
            k: self.k,
            gamma: self.gamma,
            rho: self.rho,
            beta: self.beta,
            alpha: self.alpha,
            radius: self.radius,
            epsilon: self.epsilon,
            mode: self.mode,
            overrides: self.overrides,
        }
    }
}

/// Writes `<stem>.json` and `<stem>.clbf` into `dir`.
pub fn save_instance(inst: &HardInstance, seed: u64, dir: &Path, stem: &str) -> Result<InstanceDescriptor> {
    std::fs::create_dir_all(dir)?;
    let frame_file = format!("{stem}.clbf");
    let desc = InstanceDescriptor::new(inst, seed, &frame_file);
    let mut buf = Vec::new();
    write_frame(&mut buf, inst.frame())?;
    std::fs::write(dir.join(&frame_file), buf)?;
    let mut json = serde_json::to_string_pretty(&desc)?;
    json.push('\n');
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(desc)
}

/// Reads a descriptor and its frame; the frame path is relative to the descriptor.
pub fn load_instance(descriptor_path: &Path) -> Result<(HardInstance, InstanceDescriptor)> {
    let text = std::fs::read_to_string(descriptor_path)?;
    let desc: InstanceDescriptor = serde_json::from_str(&text)?;
    let base = descriptor_path.parent().unwrap_or_else(|| Path::new("."));
    let frame = read_frame(std::fs::File::open(base.join(&desc.frame))?)?;
    if frame.n() as u64 != desc.n || frame.k() as u64 != desc.k || frame.seed() != desc.seed {
        return Err(ClbError::Format("frame header does not match the descriptor".into()));
    }
    let smoothing = SmoothingConfig::new(
        desc.beta,
        desc.p,
        desc.mc_samples,
        StreamId::root(desc.seed).child("smoothing"),
    )?;
    let inst = HardInstance::from_parts(desc.params(), frame, smoothing)?;
    Ok((inst, desc))
}
