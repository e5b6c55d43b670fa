//! Batches of seeded games: the round budget below which baseline methods
//! fail, and the parallel-round success bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hiding::HidingReport;
use super::tower::{run_hybrid_game, GameLimits};
use super::{algorithm_stream, parallel_bound, quantum_bound_analytic, trial_seed, ReportHeader};
use crate::error::{ClbError, Result};
use crate::instance::InstanceParams;
use crate::optimizers::{
    AgdPolicy, InformedPolicy, PointPolicy, RandomSearchPolicy, StepRule, SubgradientPolicy, ZeroPolicy,
};
use crate::rng::StreamId;
use crate::softmax::smax_lipschitz_bound;
use crate::stats::Proportion;

pub const POLICY_NAMES: [&str; 5] = ["subgradient", "agd", "random", "zero", "informed"];

/// Baseline policy by name; `per_round > 1` only applies to random search.
pub fn baseline_policy(name: &str, params: &InstanceParams, per_round: usize, stream: StreamId) -> Result<Box<PointPolicy>> {
    let n = params.dim();
    let r = params.radius;
    Ok(match name {
        "subgradient" => Box::new(SubgradientPolicy::new(n, r, StepRule::default())),
        "agd" => Box::new(AgdPolicy::new(n, smax_lipschitz_bound(1, params.rho), r)?),
        "random" => Box::new(RandomSearchPolicy::parallel(n, r, per_round, stream)),
        "zero" => Box::new(ZeroPolicy::new(n)),
        "informed" => Box::new(InformedPolicy::new(n, params.k_usize())),
        other => return Err(ClbError::InvalidParameter(format!("unknown policy {other:?}"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallRow {
    pub policy: String,
    pub rounds: usize,
    pub per_round: usize,
    pub success: Proportion,
    pub hybrid_success: Proportion,
    pub divergences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallReport {
    pub header: ReportHeader,
    pub runs: u64,
    pub rows: Vec<WallRow>,
}

impl WallReport {
    pub fn row(&self, policy: &str, rounds: usize) -> Option<&WallRow> {
        self.rows.iter().find(|r| r.policy == policy && r.rounds == rounds)
    }
}

/// Plays `policy` for `rounds` rounds of `per_round` queries on `runs`
/// independent instances derived from `seed`.
pub fn run_batch(
    policy: &str,
    params: &InstanceParams,
    seed: u64,
    runs: u64,
    rounds: usize,
    per_round: usize,
    mc_samples: usize,
) -> Result<WallRow> {
    let outcomes: Vec<(bool, bool, bool)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let pol = baseline_policy(policy, params, per_round, algorithm_stream(seed, run))?;
            let tr = run_hybrid_game(
                pol,
                params,
                trial_seed(seed, run),
                mc_samples,
                1,
                rounds,
                per_round,
                GameLimits::default(),
            )?;
            Ok((tr.success, tr.hybrid_success, tr.divergence_round.is_some()))
        })
        .collect::<Result<_>>()?;
    let count = |f: fn(&(bool, bool, bool)) -> bool| outcomes.iter().filter(|o| f(o)).count() as u64;
    Ok(WallRow {
        policy: policy.to_string(),
        rounds,
        per_round,
        success: Proportion::at_95(count(|o| o.0), runs),
        hybrid_success: Proportion::at_95(count(|o| o.1), runs),
        divergences: count(|o| o.2),
    })
}

/// Baselines with `k - 1` rounds, and the informed strategy with `k - 1` and `k` rounds.
pub fn wall_experiment(
    params: &InstanceParams,
    seed: u64,
    runs: u64,
    mc_samples: usize,
    baselines: &[&str],
) -> Result<WallReport> {
    let k = params.k_usize();
    let mut rows = Vec::new();
    for &b in baselines {
        rows.push(run_batch(b, params, seed, runs, k - 1, 1, mc_samples)?);
    }
    rows.push(run_batch("informed", params, seed, runs, k - 1, 1, mc_samples)?);
    rows.push(run_batch("informed", params, seed, runs, k, 1, mc_samples)?);
    Ok(WallReport { header: ReportHeader::new(params, seed, mc_samples), runs, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelReport {
    pub header: ReportHeader,
    pub per_round: usize,
    pub rounds: usize,
    pub rows: Vec<WallRow>,
    pub delta1_hat: f64,
    pub delta2_hat: f64,
    /// `delta2_hat + k K delta1_hat` from point estimates.
    pub bound: f64,
    /// The same bound from the upper 95% confidence limits.
    pub bound_upper: f64,
    /// `delta_2 + 4 m sqrt(delta_1)` for quantum algorithms; analytic, not simulated.
    pub quantum_bound_analytic: f64,
}

impl ParallelReport {
    /// Every policy's success rate is consistent with the bound: the lower
    /// confidence limit of the success rate does not exceed it.
    pub fn respects_bound(&self) -> bool {
        self.rows.iter().all(|r| r.success.ci_low <= self.bound)
    }
}

/// `per_round` queries per round for `k - 1` rounds, against the bound from `hiding`.
pub fn parallel_experiment(
    params: &InstanceParams,
    seed: u64,
    runs: u64,
    per_round: usize,
    mc_samples: usize,
    hiding: &HidingReport,
    policies: &[&str],
) -> Result<ParallelReport> {
    let k = params.k_usize();
    let rounds = k - 1;
    let rows = policies
        .iter()
        .map(|p| run_batch(p, params, seed, runs, rounds, if *p == "random" { per_round } else { 1 }, mc_samples))
        .collect::<Result<Vec<_>>>()?;
    let (d1, d2) = (hiding.delta1_hat(), hiding.delta2_hat());
    Ok(ParallelReport {
        header: ReportHeader::new(params, seed, mc_samples),
        per_round,
        rounds,
        rows,
        delta1_hat: d1,
        delta2_hat: d2,
        bound: parallel_bound(d1, d2, k, per_round),
        bound_upper: parallel_bound(hiding.delta1_upper(), hiding.delta2_upper(), k, per_round),
        quantum_bound_analytic: quantum_bound_analytic(d1, d2, k),
    })
}
