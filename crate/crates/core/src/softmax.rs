//! Temperature-`rho` log-sum-exp, its derivatives and prefix variant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};

/// Largest input length for which a dense Hessian is materialized.
pub const HESSIAN_MAX_DIM: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub rho: f64,
}

fn check(rho: f64, z: &[f64]) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(ClbError::InvalidParameter(format!("rho = {rho} must be positive")));
    }
    if z.is_empty() {
        return Err(ClbError::InvalidParameter("softmax of an empty vector".into()));
    }
    Ok(())
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `ln sum_i exp(z_i / rho)` and the shift `max z`, without the outer `rho`.
fn lse_scaled(rho: f64, z: &[f64]) -> (f64, f64) {
    let m = max_of(z);
    let s: f64 = z.iter().map(|&zi| ((zi - m) / rho).exp()).sum();
    (m, s.ln())
}

/// `rho ln sum_i exp(z_i / rho)`.
pub fn smax(rho: f64, z: &[f64]) -> Result<f64> {
    check(rho, z)?;
    let (m, l) = lse_scaled(rho, z);
    Ok(m + rho * l)
}

/// `smax` of the first `m` coordinates.
pub fn smax_prefix(rho: f64, m: usize, z: &[f64]) -> Result<f64> {
    if m < 1 || m > z.len() {
        return Err(ClbError::IndexOutOfRange { index: m, max: z.len() });
    }
    smax(rho, &z[..m])
}

/// Softmax weights `exp(z_i / rho) / sum_j exp(z_j / rho)`.
pub fn smax_grad(rho: f64, z: &[f64]) -> Result<Vec<f64>> {
    check(rho, z)?;
    let m = max_of(z);
    let mut w: Vec<f64> = z.iter().map(|&zi| ((zi - m) / rho).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= s);
    Ok(w)
}

pub fn smax_eval(rho: f64, z: &[f64]) -> Result<SoftmaxEval> {
    Ok(SoftmaxEval { value: smax(rho, z)?, grad: smax_grad(rho, z)?, rho })
}

/// `(diag(w) - w w^T) / rho` with `w = smax_grad(rho, z)`.
pub fn smax_hessian(rho: f64, z: &[f64]) -> Result<DMatrix<f64>> {
    if z.len() > HESSIAN_MAX_DIM {
        return Err(ClbError::TooLarge { size: z.len(), limit: HESSIAN_MAX_DIM });
    }
    let w = smax_grad(rho, z)?;
    let d = w.len();
    // w_i (1 - w_i) as w_i times the sum of the other weights, which stays
    // accurate when w_i rounds to 1.
    let rest: Vec<f64> = (0..d).map(|i| w.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum()).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| if i == j { w[i] * rest[i] / rho } else { -w[i] * w[j] / rho }))
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// The matrix is rescaled to unit max-norm, entries below `1e-30` are flushed
/// to zero, and rows that become zero are removed (each contributes the
/// eigenvalue 0). The flush moves eigenvalues by at most `dim * 1e-30` times
/// the largest entry. The eigensolver returns NaN or -inf on nearly rank-one
/// matrices with exactly zero rows.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let scaled = m.map(|a| if (a / scale).abs() < 1e-30 { 0.0 } else { a / scale });
    let live: Vec<usize> = (0..scaled.nrows()).filter(|&i| scaled.row(i).iter().any(|&a| a != 0.0)).collect();
    let zero_rows = live.len() < scaled.nrows();
    let block = scaled.select_rows(&live).select_columns(&live);
    let mut min = if zero_rows { 0.0 } else { f64::INFINITY };
    if !live.is_empty() {
        min = block.symmetric_eigenvalues().iter().copied().fold(min, f64::min);
    }
    min * scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCloseness {
    /// `(smax(z) - smax_prefix(m, z)) / rho`.
    pub delta: f64,
    /// `4 delta`.
    pub bound: f64,
    /// `||grad smax(z) - grad smax_prefix(m, z)||` with the prefix gradient zero-padded.
    pub actual_gap: f64,
    /// The bound is only claimed for `delta < 1`.
    pub applicable: bool,
}

impl GradCloseness {
    pub fn holds(&self) -> bool {
        !self.applicable || self.actual_gap <= self.bound
    }
}

pub fn grad_closeness(rho: f64, m: usize, z: &[f64]) -> Result<GradCloseness> {
    if m < 1 || m > z.len() {
        return Err(ClbError::IndexOutOfRange { index: m, max: z.len() });
    }
    check(rho, z)?;
    // delta = ln(1 + S_tail / S_prefix), evaluated without cancellation.
    let mp = max_of(&z[..m]);
    let s_prefix: f64 = z[..m].iter().map(|&zi| ((zi - mp) / rho).exp()).sum();
    let s_tail: f64 = z[m..].iter().map(|&zi| ((zi - mp) / rho).exp()).sum();
    let delta = (s_tail / s_prefix).ln_1p();
    let full = smax_grad(rho, z)?;
    let prefix = smax_grad(rho, &z[..m])?;
    let gap = full
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let d = f - prefix.get(i).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(GradCloseness { delta, bound: 4.0 * delta, actual_gap: gap, applicable: delta < 1.0 })
}

/// `((p+1)/ln(p+2))^(p+1) p! / rho^p`, the Lipschitz constant of the `p`-th derivative.
pub fn smax_lipschitz_bound(p: u32, rho: f64) -> f64 {
    let pf = f64::from(p);
    let factorial: f64 = (1..=p).map(f64::from).product();
    ((pf + 1.0) / (pf + 2.0).ln()).powf(pf + 1.0) * factorial / rho.powi(p as i32)
}
