//! Property suites run by `clb verify`.

use serde::{Deserialize, Serialize};

use clb_core::hard_instance::HardInstance;
use clb_core::instance::concentration_check;
use clb_core::smoothing::{
    ball_offset, nested_smooth_value, smoothing_property_suite, CheckStatus, SmoothingConfig,
};
use clb_core::softmax::{grad_closeness, min_eigenvalue, smax, smax_grad, smax_hessian, smax_prefix};
use clb_core::{ClbError, Result, StreamId};

pub const SUITES: [&str; 4] = ["softmax", "smoothing", "concentration", "instance"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub pass: bool,
    pub checked: u64,
    pub violations: u64,
    /// Worst observed statistic; violations are statistics above `tolerance`.
    pub worst: Option<f64>,
    pub tolerance: f64,
    /// First violating sample, if any.
    pub violation: Option<String>,
}

impl Property {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), pass: true, checked: 0, violations: 0, worst: None, tolerance, violation: None }
    }

    /// Records one sample whose statistic is `stat`; it violates when `stat > tolerance`.
    fn record(&mut self, stat: f64, sample: impl FnOnce() -> String) {
        self.checked += 1;
        if self.worst.is_none_or(|w| stat.is_nan() || stat > w) {
            self.worst = Some(stat);
        }
        if !(stat <= self.tolerance) {
            self.violations += 1;
            self.pass = false;
            if self.violation.is_none() {
                self.violation = Some(sample());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub pass: bool,
    pub properties: Vec<Property>,
}

impl SuiteReport {
    fn new(suite: &str, properties: Vec<Property>) -> Self {
        Self { suite: suite.into(), pass: properties.iter().all(|p| p.pass), properties }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

/// Sizes of the suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyScale {
    pub softmax_inputs: u64,
    pub closeness_inputs: u64,
    pub smoothing_points: usize,
    pub concentration_trials: u64,
    pub triples: u64,
    pub oracle_points: u64,
}

impl Default for VerifyScale {
    fn default() -> Self {
        Self {
            softmax_inputs: 1000,
            closeness_inputs: 10_000,
            smoothing_points: 100,
            concentration_trials: 100_000,
            triples: 10_000,
            oracle_points: 40,
        }
    }
}

fn short(v: &[f64]) -> String {
    let shown: Vec<String> = v.iter().take(8).map(|x| format!("{x:e}")).collect();
    let more = if v.len() > 8 { format!(", ... ({} entries)", v.len()) } else { String::new() };
    format!("[{}{more}]", shown.join(", "))
}

/// Deterministic spread of `rho` over `[1e-3, 1]` on a log scale.
fn rho_of(u: f64) -> f64 {
    10f64.powf(-3.0 + 3.0 * u)
}

fn unit(stream: StreamId) -> f64 {
    (stream.key() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn softmax_suite(seed: u64, scale: &VerifyScale) -> Result<SuiteReport> {
    let root = StreamId::root(seed).child("verify-softmax");
    let mut fd = Property::new("softmax gradient matches central differences", 1e-6);
    let mut psd = Property::new("softmax hessian is positive semidefinite", 1e-10);
    let mut bounds = Property::new("max <= smax <= max + rho ln d", 1e-12);
    let mut prefix = Property::new("prefix softmax never exceeds the full softmax", 1e-12);
    for i in 0..scale.softmax_inputs {
        let s = root.child("input").index(i);
        let d = 1 + (s.child("dim").key() % 200) as usize;
        let rho = rho_of(unit(s.child("rho")));
        let z = ball_offset(d, 3.0 * (d as f64).sqrt(), &mut s.child("z").rng());
        let g = smax_grad(rho, &z)?;
        // Step scaled to rho so the truncation error stays far below 1e-6.
        let h = 1e-4 * rho;
        for j in 0..d.min(20) {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let num = (smax(rho, &zp)? - smax(rho, &zm)?) / (2.0 * h);
            fd.record((num - g[j]).abs(), || format!("rho = {rho:e}, coordinate {j}, z = {}", short(&z)));
        }
        let ev = min_eigenvalue(&smax_hessian(rho, &z)?);
        psd.record(-ev, || format!("rho = {rho:e}, min eigenvalue {ev:e}, z = {}", short(&z)));
        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v = smax(rho, &z)?;
        let excess = (mx - v).max(v - mx - rho * (d as f64).ln());
        bounds.record(excess / (1.0 + mx.abs()), || format!("rho = {rho:e}, z = {}", short(&z)));
        let m = 1 + (s.child("m").key() % d as u64) as usize;
        let gap = smax_prefix(rho, m, &z)? - v;
        prefix.record(gap / (1.0 + v.abs()), || format!("rho = {rho:e}, m = {m}, z = {}", short(&z)));
    }
    // Sample until `closeness_inputs` draws have delta < 1, where the bound is claimed.
    let mut close = Property::new("prefix gradient within 4 delta of the full gradient", 0.0);
    let attempts = 10 * scale.closeness_inputs;
    let mut i = 0;
    while close.checked < scale.closeness_inputs && i < attempts {
        let s = root.child("closeness").index(i);
        i += 1;
        let d = 2 + (s.child("dim").key() % 50) as usize;
        let rho = rho_of(unit(s.child("rho")));
        let m = 1 + (s.child("m").key() % (d as u64 - 1)) as usize;
        // Push the tail below the prefix maximum so that delta < 1 is common.
        let mut z = ball_offset(d, 1.0, &mut s.child("z").rng());
        let drop = rho * (1.0 + 10.0 * unit(s.child("drop")));
        for zi in z[m..].iter_mut() {
            *zi -= drop;
        }
        let c = grad_closeness(rho, m, &z)?;
        if c.applicable {
            close.record(c.actual_gap - c.bound, || format!("rho = {rho:e}, m = {m}, z = {}", short(&z)));
        }
    }
    if close.checked < scale.closeness_inputs {
        close.pass = false;
        close.violation = Some(format!("only {} of {attempts} draws had delta < 1", close.checked));
    }
    Ok(SuiteReport::new("softmax", vec![fd, psd, bounds, prefix, close]))
}

pub fn smoothing_suite(seed: u64, scale: &VerifyScale) -> Result<SuiteReport> {
    let root = StreamId::root(seed).child("verify-smoothing");
    let mut props = Vec::new();

    // S_{1/2}[x^2](0) = E[u^2] for u uniform on [-1/2, 1/2], which is 1/12.
    let cfg = SmoothingConfig::new(1.0, 1, 100_000, root.child("square"))?;
    let est = nested_smooth_value(&|y: &[f64]| y[0] * y[0], &cfg, &[0.0])?;
    let mut square = Property::new("S[x^2](0) = 1/12 within 4 stderr", 4.0);
    square.record((est.mean - 1.0 / 12.0).abs() / est.stderr.max(f64::MIN_POSITIVE), || {
        format!("estimate {:e}, stderr {:e}", est.mean, est.stderr)
    });
    props.push(square);

    // A 1-Lipschitz convex max of eight linear forms in dimension 16.
    let n = 16;
    let forms: Vec<Vec<f64>> = (0..8)
        .map(|i| clb_core::instance::random_unit_vector(n, &mut root.child("forms").index(i).rng()))
        .collect();
    let offsets: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
    let f = |y: &[f64]| {
        forms
            .iter()
            .zip(&offsets)
            .map(|(a, b)| a.iter().zip(y).map(|(u, v)| u * v).sum::<f64>() + b)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let points: Vec<Vec<f64>> = (0..scale.smoothing_points)
        .map(|i| ball_offset(n, 1.0, &mut root.child("points").index(i as u64).rng()))
        .collect();
    let cfg = SmoothingConfig::new(0.05, 2, 2000, root.child("suite"))?;
    let report = smoothing_property_suite(&f, 1.0, true, &cfg, &points)?;
    for c in report.checks {
        let pass = c.status == CheckStatus::Pass;
        props.push(Property {
            name: c.name,
            pass,
            checked: points.len() as u64,
            violations: u64::from(!pass),
            worst: Some(c.worst),
            tolerance: c.tolerance,
            violation: if pass { None } else { Some(format!("{:?}: {}", c.status, c.detail)) },
        });
    }
    Ok(SuiteReport::new("smoothing", props))
}

pub fn concentration_suite(seed: u64, scale: &VerifyScale) -> Result<SuiteReport> {
    let root = StreamId::root(seed).child("verify-concentration");
    let mut props = Vec::new();
    for (i, (n, c)) in [(100usize, 0.3f64), (1000, 0.1), (10_000, 0.05)].into_iter().enumerate() {
        let r = concentration_check(n, c, scale.concentration_trials, root.index(i as u64))?;
        let mut p = Property::new(&format!("Pr(|<x, v>| >= {c}) at n = {n} below 2 exp(-n c^2 / 2) + 3 sigma"), 0.0);
        p.record(r.empirical - r.bound - 3.0 * r.sigma, || {
            format!("{} of {} trials exceeded (bound {:e}, sigma {:e})", r.exceedances, r.trials, r.bound, r.sigma)
        });
        props.push(p);
    }
    Ok(SuiteReport::new("concentration", props))
}

/// Points spread over the ball: odd indices lie mostly in the span of the
/// frame, where the tower has its kinks.
fn instance_point(inst: &HardInstance, stream: StreamId, i: u64) -> Vec<f64> {
    let n = inst.n();
    let r = inst.params().radius;
    if i.is_multiple_of(2) {
        return ball_offset(n, r, &mut stream.rng());
    }
    let coeffs = ball_offset(inst.known(), 0.95 * r, &mut stream.child("span").rng());
    let mut x = inst.frame().combine(&coeffs);
    let noise = ball_offset(n, 0.05 * r, &mut stream.child("noise").rng());
    for (a, b) in x.iter_mut().zip(&noise) {
        *a += b;
    }
    x
}

pub fn instance_suite(inst: &HardInstance, seed: u64, scale: &VerifyScale) -> Result<SuiteReport> {
    let root = StreamId::root(seed).child("verify-instance");
    let params = inst.params();
    let mut ortho = Property::new("frame is orthonormal", 1e-10);
    let err = inst.frame().orthonormality_error();
    ortho.record(err, || format!("max |<v_i, v_j> - delta_ij| = {err:e}"));

    let mut lip = Property::new("h_t is 1-Lipschitz", 1e-12);
    let mut convex = Property::new("h_t is midpoint convex", 1e-12);
    for i in 0..scale.triples {
        let s = root.child("triple").index(i);
        let t = 1 + (s.child("level").key() % inst.known() as u64) as usize;
        let x = instance_point(inst, s.child("x"), i);
        let y = instance_point(inst, s.child("y"), i);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let (hx, _) = inst.h_value(t, &x)?;
        let (hy, _) = inst.h_value(t, &y)?;
        let (hm, _) = inst.h_value(t, &mid)?;
        lip.record((hx - hy).abs() - dist, || format!("level {t}, x = {}, y = {}", short(&x), short(&y)));
        convex.record(hm - 0.5 * (hx + hy), || format!("level {t}, x = {}, y = {}", short(&x), short(&y)));
    }

    let mut grad = Property::new("oracle gradient norm <= 1 + 5 stderr", 1e-12);
    let mut value = Property::new("oracle value within beta + 3 stderr of h", 1e-12);
    if inst.is_complete() {
        let k = inst.k();
        for i in 0..scale.oracle_points {
            let x = instance_point(inst, root.child("oracle-point").index(i), i);
            let a = inst.oracle_query(k, &x, 1, root.child("oracle").index(i), &[])?;
            let g = a.grad.as_ref().expect("order 1 has a gradient");
            let gn = g.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            grad.record(gn - 1.0 - 5.0 * g.stderr, || format!("norm {gn:e}, stderr {:e}, x = {}", g.stderr, short(&x)));
            let (h, _) = inst.h_value(k, &x)?;
            let gap = (a.value.mean - h).abs();
            value.record(gap - params.beta - 3.0 * a.value.stderr, || {
                format!("|g - h| = {gap:e}, stderr {:e}, x = {}", a.value.stderr, short(&x))
            });
        }
    }
    Ok(SuiteReport::new("instance", vec![ortho, lip, convex, grad, value]))
}

/// Parses a comma-separated suite list; `None` means every suite.
pub fn select_suites(list: Option<&str>) -> Result<Vec<&'static str>> {
    let Some(list) = list else { return Ok(SUITES.to_vec()) };
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some(&s) = SUITES.iter().find(|&&s| s == name) else {
            return Err(ClbError::InvalidParameter(format!(
                "unknown suite {name:?} (expected one of {})",
                SUITES.join(", ")
            )));
        };
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(ClbError::InvalidParameter("empty suite list".into()));
    }
    Ok(out)
}
