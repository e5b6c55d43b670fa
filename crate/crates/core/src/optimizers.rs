//! Baseline query algorithms, written as step machines so the same code can
//! be driven by a plain oracle loop or by the resisting-oracle game.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};
use crate::hard_instance::{HardInstance, OracleResponse};
use crate::instance::norm;
use crate::rng::StreamId;
use crate::smoothing::{ball_offset, SmoothedEstimate, SmoothedVector};

/// An algorithm that issues rounds of queries and finally outputs a point.
///
/// Randomness is fixed at construction, so a policy is a deterministic
/// function of the answers it has observed.
pub trait QueryPolicy<Q, A>: Send {
    fn name(&self) -> String;
    /// Queries of the next round; an empty round means the policy is done.
    fn propose(&mut self) -> Vec<Q>;
    fn observe(&mut self, queries: &[Q], answers: &[A]) -> Result<()>;
    fn output(&self) -> Q;
    /// Independent copy in the current state.
    fn fork(&self) -> Box<dyn QueryPolicy<Q, A>>;
    /// First detected failure of the method's assumptions, if any.
    fn divergence(&self) -> Option<String> {
        None
    }
}

/// Policy over points of `R^n` answered by oracle responses.
pub type PointPolicy = dyn QueryPolicy<Vec<f64>, OracleResponse>;

/// Sequential first-order oracle.
pub trait Oracle {
    fn dim(&self) -> usize;
    fn radius(&self) -> f64;
    fn query(&mut self, x: &[f64]) -> Result<OracleResponse>;
}

/// Order-1 oracle for `g = S[h]` of a complete hard instance; query `i` uses substream `i`.
pub struct InstanceOracle<'a> {
    inst: &'a HardInstance,
    count: u64,
}

impl<'a> InstanceOracle<'a> {
    pub fn new(inst: &'a HardInstance) -> Self {
        Self { inst, count: 0 }
    }
}

impl Oracle for InstanceOracle<'_> {
    fn dim(&self) -> usize {
        self.inst.n()
    }

    fn radius(&self) -> f64 {
        self.inst.params().radius
    }

    fn query(&mut self, x: &[f64]) -> Result<OracleResponse> {
        let stream = self.inst.query_stream(0, self.count);
        self.count += 1;
        self.inst.oracle_query(self.inst.k(), x, 1, stream, &[])
    }
}

/// Exact oracle from a closure returning `(value, gradient)`.
pub struct FnOracle<F> {
    dim: usize,
    radius: f64,
    f: F,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> FnOracle<F> {
    pub fn new(dim: usize, radius: f64, f: F) -> Self {
        Self { dim, radius, f }
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Oracle for FnOracle<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn query(&mut self, x: &[f64]) -> Result<OracleResponse> {
        let (v, g) = (self.f)(x);
        Ok(exact_response(v, g))
    }
}

pub fn exact_response(value: f64, grad: Vec<f64>) -> OracleResponse {
    OracleResponse {
        value: SmoothedEstimate::exact(value),
        grad: Some(SmoothedVector { mean: grad, stderr: 0.0, samples_used: 0 }),
        hessian_probe: None,
        higher_probes: Vec::new(),
        order: 1,
        level: 0,
        max_branch: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub value_mean: f64,
    pub value_stderr: f64,
    pub grad_norm: f64,
    pub grad_stderr: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub method: String,
    pub budget: usize,
    pub rows: Vec<TraceRow>,
    /// Queried points, aligned with `rows`.
    #[serde(skip)]
    pub points: Vec<Vec<f64>>,
    pub best_value: f64,
    pub output: Vec<f64>,
    pub divergence: Option<String>,
}

impl OptimizerTrace {
    pub fn queries(&self) -> usize {
        self.rows.len()
    }

    /// CSV with columns `step,value_mean,value_stderr,grad_norm,best_value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,value_mean,value_stderr,grad_norm,best_value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step, r.value_mean, r.value_stderr, r.grad_norm, r.best_value
            );
        }
        s
    }
}

/// Drives `policy` against `oracle` for at most `budget` queries.
pub fn run_policy<O: Oracle + ?Sized>(oracle: &mut O, policy: &mut PointPolicy, budget: usize) -> Result<OptimizerTrace> {
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut best = f64::INFINITY;
    let r = oracle.radius();
    while rows.len() < budget {
        let mut round = policy.propose();
        if round.is_empty() {
            break;
        }
        round.truncate(budget - rows.len());
        let mut answers = Vec::with_capacity(round.len());
        for x in &round {
            if x.len() != oracle.dim() {
                return Err(ClbError::DimensionMismatch { expected: oracle.dim(), got: x.len() });
            }
            if norm(x) > r * (1.0 + 1e-12) {
                return Err(ClbError::OutsideDomain { norm: norm(x), radius: r });
            }
            let a = oracle.query(x)?;
            best = best.min(a.value.mean);
            let (gn, gs) = a.grad.as_ref().map_or((f64::NAN, f64::NAN), |g| (norm(&g.mean), g.stderr));
            rows.push(TraceRow {
                step: rows.len() + 1,
                value_mean: a.value.mean,
                value_stderr: a.value.stderr,
                grad_norm: gn,
                grad_stderr: gs,
                best_value: best,
            });
            points.push(x.clone());
            answers.push(a);
        }
        policy.observe(&round, &answers)?;
    }
    Ok(OptimizerTrace {
        method: policy.name(),
        budget,
        rows,
        points,
        best_value: best,
        output: policy.output(),
        divergence: policy.divergence(),
    })
}

/// Euclidean projection onto the ball of radius `r`.
pub fn project_ball(x: &mut [f64], r: f64) {
    let nx = norm(x);
    if nx > r {
        let s = r / nx;
        x.iter_mut().for_each(|a| *a *= s);
    }
}

fn grad_of(a: &OracleResponse) -> Result<&[f64]> {
    a.grad.as_ref().map(|g| g.mean.as_slice()).ok_or_else(|| ClbError::InvalidParameter("oracle returned no gradient".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `eta_t = R / (G sqrt t)`.
    InvSqrt { lipschitz: f64 },
    Constant(f64),
}

impl Default for StepRule {
    fn default() -> Self {
        Self::InvSqrt { lipschitz: 1.0 }
    }
}

/// Projected subgradient descent from the origin; outputs the last iterate.
#[derive(Debug, Clone)]
pub struct SubgradientPolicy {
    x: Vec<f64>,
    t: usize,
    radius: f64,
    rule: StepRule,
}

impl SubgradientPolicy {
    pub fn new(n: usize, radius: f64, rule: StepRule) -> Self {
        Self { x: vec![0.0; n], t: 0, radius, rule }
    }
}

impl QueryPolicy<Vec<f64>, OracleResponse> for SubgradientPolicy {
    fn name(&self) -> String {
        "subgradient".into()
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        vec![self.x.clone()]
    }

    fn observe(&mut self, _q: &[Vec<f64>], answers: &[OracleResponse]) -> Result<()> {
        for a in answers {
            self.t += 1;
            let eta = match self.rule {
                StepRule::InvSqrt { lipschitz } => self.radius / (lipschitz * (self.t as f64).sqrt()),
                StepRule::Constant(eta) => eta,
            };
            let g = grad_of(a)?;
            self.x.iter_mut().zip(g).for_each(|(xi, gi)| *xi -= eta * gi);
            project_ball(&mut self.x, self.radius);
        }
        Ok(())
    }

    fn output(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn fork(&self) -> Box<PointPolicy> {
        Box::new(self.clone())
    }
}

/// Projected accelerated gradient (FISTA form) with step `1/L`, querying the
/// extrapolated sequence. Flags divergence when the observed curvature
/// between consecutive queries exceeds twice the assumed `L`.
#[derive(Debug, Clone)]
pub struct AgdPolicy {
    lipschitz: f64,
    radius: f64,
    y: Vec<f64>,
    x_prev: Vec<f64>,
    x: Vec<f64>,
    lambda: f64,
    last: Option<(Vec<f64>, f64, f64, Vec<f64>)>,
    divergence: Option<String>,
    steps: usize,
}

impl AgdPolicy {
    pub fn new(n: usize, lipschitz: f64, radius: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(ClbError::InvalidParameter(format!("L = {lipschitz} must be positive")));
        }
        Ok(Self {
            lipschitz,
            radius,
            y: vec![0.0; n],
            x_prev: vec![0.0; n],
            x: vec![0.0; n],
            lambda: 1.0,
            last: None,
            divergence: None,
            steps: 0,
        })
    }

    fn check_curvature(&mut self, y: &[f64], a: &OracleResponse, g: &[f64]) {
        if let Some((py, pv, pse, pg)) = &self.last {
            let d: Vec<f64> = y.iter().zip(py).map(|(a, b)| a - b).collect();
            let d2: f64 = d.iter().map(|v| v * v).sum();
            if d2 > 0.0 {
                let lin: f64 = pg.iter().zip(&d).map(|(u, v)| u * v).sum();
                let curv = 2.0 * (a.value.mean - pv - lin) / d2;
                let noise = 6.0 * (a.value.stderr + pse) / d2;
                if curv > 2.0 * self.lipschitz + noise && self.divergence.is_none() {
                    self.divergence = Some(format!(
                        "step {}: observed curvature {curv:.6e} exceeds 2L = {:.6e}; L is underestimated",
                        self.steps,
                        2.0 * self.lipschitz
                    ));
                }
            }
        }
        self.last = Some((y.to_vec(), a.value.mean, a.value.stderr, g.to_vec()));
    }
}

impl QueryPolicy<Vec<f64>, OracleResponse> for AgdPolicy {
    fn name(&self) -> String {
        "agd".into()
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        vec![self.y.clone()]
    }

    fn observe(&mut self, queries: &[Vec<f64>], answers: &[OracleResponse]) -> Result<()> {
        for (y, a) in queries.iter().zip(answers) {
            self.steps += 1;
            let g = grad_of(a)?.to_vec();
            self.check_curvature(y, a, &g);
            let mut x_new: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / self.lipschitz).collect();
            project_ball(&mut x_new, self.radius);
            let lambda_next = 0.5 * (1.0 + (1.0 + 4.0 * self.lambda * self.lambda).sqrt());
            let momentum = (self.lambda - 1.0) / lambda_next;
            self.x_prev = std::mem::replace(&mut self.x, x_new);
            self.y = self.x.iter().zip(&self.x_prev).map(|(a, b)| a + momentum * (a - b)).collect();
            project_ball(&mut self.y, self.radius);
            self.lambda = lambda_next;
        }
        Ok(())
    }

    fn output(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn fork(&self) -> Box<PointPolicy> {
        Box::new(self.clone())
    }

    fn divergence(&self) -> Option<String> {
        self.divergence.clone()
    }
}

/// Uniform samples of the ball, `per_round` at a time; outputs the best seen.
#[derive(Debug, Clone)]
pub struct RandomSearchPolicy {
    n: usize,
    radius: f64,
    per_round: usize,
    rng: ChaCha8Rng,
    best: Option<(f64, Vec<f64>)>,
}

impl RandomSearchPolicy {
    pub fn new(n: usize, radius: f64, stream: StreamId) -> Self {
        Self::parallel(n, radius, 1, stream)
    }

    pub fn parallel(n: usize, radius: f64, per_round: usize, stream: StreamId) -> Self {
        Self { n, radius, per_round: per_round.max(1), rng: stream.rng(), best: None }
    }
}

impl QueryPolicy<Vec<f64>, OracleResponse> for RandomSearchPolicy {
    fn name(&self) -> String {
        if self.per_round == 1 {
            "random".into()
        } else {
            format!("random-x{}", self.per_round)
        }
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        (0..self.per_round).map(|_| ball_offset(self.n, self.radius, &mut self.rng)).collect()
    }

    fn observe(&mut self, queries: &[Vec<f64>], answers: &[OracleResponse]) -> Result<()> {
        for (q, a) in queries.iter().zip(answers) {
            if self.best.as_ref().is_none_or(|(v, _)| a.value.mean < *v) {
                self.best = Some((a.value.mean, q.clone()));
            }
        }
        Ok(())
    }

    fn output(&self) -> Vec<f64> {
        self.best.as_ref().map_or_else(|| vec![0.0; self.n], |(_, x)| x.clone())
    }

    fn fork(&self) -> Box<PointPolicy> {
        Box::new(self.clone())
    }
}

/// Always queries and outputs the origin.
#[derive(Debug, Clone)]
pub struct ZeroPolicy {
    n: usize,
}

impl ZeroPolicy {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl QueryPolicy<Vec<f64>, OracleResponse> for ZeroPolicy {
    fn name(&self) -> String {
        "zero".into()
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.n]]
    }

    fn observe(&mut self, _q: &[Vec<f64>], _a: &[OracleResponse]) -> Result<()> {
        Ok(())
    }

    fn output(&self) -> Vec<f64> {
        vec![0.0; self.n]
    }

    fn fork(&self) -> Box<PointPolicy> {
        Box::new(self.clone())
    }
}

/// Learns one hidden vector per query: at round `i` it queries
/// `-(1/sqrt k) sum_{j<i} v_j` (estimates), where the gradient is dominated
/// by `v_i`, and recovers `v_i` by Gram-Schmidt against the earlier estimates.
/// Outputs `-(1/sqrt k) sum_j v_j` over everything learned.
#[derive(Debug, Clone)]
pub struct InformedPolicy {
    n: usize,
    k: usize,
    learned: Vec<Vec<f64>>,
}

impl InformedPolicy {
    pub fn new(n: usize, k: usize) -> Self {
        Self { n, k, learned: Vec::new() }
    }

    pub fn learned(&self) -> &[Vec<f64>] {
        &self.learned
    }

    fn point(&self) -> Vec<f64> {
        let c = -1.0 / (self.k as f64).sqrt();
        let mut x = vec![0.0; self.n];
        for v in &self.learned {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
        }
        project_ball(&mut x, 1.0);
        x
    }
}

impl QueryPolicy<Vec<f64>, OracleResponse> for InformedPolicy {
    fn name(&self) -> String {
        "informed".into()
    }

    fn propose(&mut self) -> Vec<Vec<f64>> {
        if self.learned.len() >= self.k {
            return Vec::new();
        }
        vec![self.point()]
    }

    fn observe(&mut self, _q: &[Vec<f64>], answers: &[OracleResponse]) -> Result<()> {
        for a in answers {
            if self.learned.len() >= self.k {
                break;
            }
            let mut v = grad_of(a)?.to_vec();
            for _ in 0..2 {
                for u in &self.learned {
                    let c: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
                }
            }
            let nv = norm(&v);
            if nv > 0.0 {
                v.iter_mut().for_each(|a| *a /= nv);
                self.learned.push(v);
            }
        }
        Ok(())
    }

    fn output(&self) -> Vec<f64> {
        self.point()
    }

    fn fork(&self) -> Box<PointPolicy> {
        Box::new(self.clone())
    }
}

pub fn subgradient_descent<O: Oracle + ?Sized>(oracle: &mut O, radius: f64, steps: usize, rule: StepRule) -> Result<OptimizerTrace> {
    let mut policy = SubgradientPolicy::new(oracle.dim(), radius, rule);
    run_policy(oracle, &mut policy, steps)
}

pub fn nesterov_agd<O: Oracle + ?Sized>(oracle: &mut O, lipschitz: f64, radius: f64, steps: usize) -> Result<OptimizerTrace> {
    let mut policy = AgdPolicy::new(oracle.dim(), lipschitz, radius)?;
    run_policy(oracle, &mut policy, steps)
}

pub fn random_search<O: Oracle + ?Sized>(oracle: &mut O, radius: f64, steps: usize, stream: StreamId) -> Result<OptimizerTrace> {
    let mut policy = RandomSearchPolicy::new(oracle.dim(), radius, stream);
    run_policy(oracle, &mut policy, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: Vec<f64>) -> FnOracle<impl FnMut(&[f64]) -> (f64, Vec<f64>)> {
        let n = a.len();
        FnOracle::new(n, 1.0, move |x: &[f64]| (x.iter().zip(&a).map(|(u, v)| u * v).sum(), a.clone()))
    }

    fn quadratic(weights: Vec<f64>, c: Vec<f64>) -> FnOracle<impl FnMut(&[f64]) -> (f64, Vec<f64>)> {
        let n = c.len();
        FnOracle::new(n, 1.0, move |x: &[f64]| {
            let mut v = 0.0;
            let mut g = vec![0.0; x.len()];
            for i in 0..x.len() {
                let d = x[i] - c[i];
                v += weights[i] * d * d;
                g[i] = 2.0 * weights[i] * d;
            }
            (v, g)
        })
    }

    #[test]
    fn subgradient_on_linear_reaches_the_boundary_minimum() {
        let a = vec![0.3, -0.5, 0.2, 0.1];
        let na = norm(&a);
        let mut o = linear(a.clone());
        let tr = subgradient_descent(&mut o, 1.0, 100, StepRule::default()).unwrap();
        assert_eq!(tr.queries(), 100);
        let out: f64 = tr.output.iter().zip(&a).map(|(u, v)| u * v).sum();
        assert!(out <= -0.9 * na, "{out}");
        assert!(tr.rows.windows(2).all(|w| w[1].best_value <= w[0].best_value));
    }

    #[test]
    fn zero_budget_outputs_origin() {
        let mut o = linear(vec![1.0, 0.0]);
        let tr = subgradient_descent(&mut o, 1.0, 0, StepRule::default()).unwrap();
        assert_eq!(tr.queries(), 0);
        assert_eq!(tr.output, vec![0.0, 0.0]);
    }

    #[test]
    fn agd_isotropic_quadratic_is_solved_in_one_step() {
        let c = vec![0.3, -0.2, 0.1];
        let mut o = quadratic(vec![1.0; 3], c.clone());
        let tr = nesterov_agd(&mut o, 2.0, 1.0, 5).unwrap();
        assert!(tr.output.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(tr.divergence.is_none());
    }

    #[test]
    fn agd_rate_on_anisotropic_quadratic() {
        // Harmonic spectrum in (0, 1]; an isotropic quadratic is solved in one step.
        let n = 100;
        let weights: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let c = vec![0.9 / (n as f64).sqrt(); n];
        let f = |x: &[f64]| -> f64 { x.iter().zip(&c).zip(&weights).map(|((a, b), w)| w * (a - b) * (a - b)).sum() };
        let gap = |steps| {
            let mut o = quadratic(weights.clone(), c.clone());
            let tr = nesterov_agd(&mut o, 2.0, 1.0, steps).unwrap();
            assert!(tr.divergence.is_none());
            f(&tr.output)
        };
        let (g20, g40) = (gap(20), gap(40));
        assert!(g40 / g20 <= 0.3, "{g20} {g40}");
    }

    #[test]
    fn agd_flags_underestimated_smoothness() {
        let mut o = quadratic(vec![1.0; 3], vec![0.3, -0.2, 0.1]);
        let tr = nesterov_agd(&mut o, 0.02, 1.0, 10).unwrap();
        assert!(tr.divergence.is_some());
        assert!(tr.rows.len() == 10);
    }

    #[test]
    fn single_random_sample_is_the_output() {
        let mut o = linear(vec![0.5, 0.5, 0.0]);
        let tr = random_search(&mut o, 1.0, 1, StreamId::root(3)).unwrap();
        assert_eq!(tr.points.len(), 1);
        assert_eq!(tr.output, tr.points[0]);
        assert!(norm(&tr.output) <= 1.0);
    }

    #[test]
    fn random_search_is_reproducible() {
        let run = || random_search(&mut linear(vec![0.1, 0.2, -0.3]), 1.0, 20, StreamId::root(5)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_has_documented_columns() {
        let tr = subgradient_descent(&mut linear(vec![1.0, 0.0]), 1.0, 2, StepRule::default()).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,value_mean,value_stderr,grad_norm,best_value"));
        assert_eq!(lines.count(), 2);
    }
}
