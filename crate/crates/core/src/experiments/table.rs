//! Measured query wall versus the rate predicted from the empirical
//! smoothness constant, over a sweep of instance sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tower::{run_hybrid_game, GameLimits};
use super::{trial_seed, ReportHeader};
use crate::error::{ClbError, Result};
use crate::hard_instance::{HardInstance, PairSampling};
use crate::instance::{params_schedule, ScheduleMode, ScheduleOverrides};
use crate::optimizers::InformedPolicy;
use crate::rng::StreamId;
use crate::stats::Proportion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableSize {
    pub n: u64,
    /// Fixed `gamma`; `None` uses the schedule.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub seed: u64,
    pub mc_samples: usize,
    pub runs: u64,
    pub lipschitz_pairs: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self { seed: 0, mc_samples: 4096, runs: 20, lipschitz_pairs: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub header: ReportHeader,
    pub k: u64,
    pub epsilon: f64,
    /// Empirical Lipschitz constant of the `p`-th derivative.
    pub lipschitz: f64,
    /// `(L R^{p+1} / eps)^{2/(3p+1)} ln(L R^{p+1} / eps)^{-2/3}`.
    pub predictor: f64,
    pub predictor_over_k: f64,
    /// Runs where the informed strategy fails with `k - 1` rounds and succeeds with `k`.
    pub wall_at_k: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTable {
    pub p: u32,
    pub rows: Vec<TableRow>,
    /// Largest over smallest `predictor / k` across rows with `k >= 2`
    /// (for `k = 1` the function is linear and has no smoothness constant).
    pub ratio_spread: f64,
}

impl MainTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,gamma,k,epsilon,lipschitz,predictor,predictor_over_k,wall_at_k\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.header.params.n,
                r.header.params.gamma,
                r.k,
                r.epsilon,
                r.lipschitz,
                r.predictor,
                r.predictor_over_k,
                r.wall_at_k.estimate
            ));
        }
        out
    }
}

/// Rate predictor from a smoothness constant (with `R = 1`).
pub fn rate_predictor(p: u32, lipschitz: f64, radius: f64, epsilon: f64) -> f64 {
    let ratio = lipschitz * radius.powi(p as i32 + 1) / epsilon;
    ratio.powf(2.0 / f64::from(3 * p + 1)) * ratio.ln().powf(-2.0 / 3.0)
}

pub fn reproduce_theorem_main_table(p: u32, sizes: &[TableSize], cfg: TableConfig) -> Result<MainTable> {
    if !(p == 1 || p == 2) {
        return Err(ClbError::InvalidParameter(format!("the table supports p = 1 or 2, got {p}")));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for size in sizes {
        let overrides = size.gamma.map(ScheduleOverrides::with_gamma).unwrap_or_default();
        let params = params_schedule(size.n, p, ScheduleMode::Scaled, overrides)?;
        let k = params.k_usize();
        let inst = HardInstance::generate(params.clone(), cfg.seed, cfg.mc_samples)?;
        let stream = StreamId::root(cfg.seed).child("table-lipschitz");
        let lip = inst.lipschitz_probe(p, cfg.lipschitz_pairs, PairSampling::Transition, stream)?;
        let predictor = rate_predictor(p, lip.empirical, params.radius, params.epsilon);

        let walls: Vec<bool> = (0..cfg.runs)
            .into_par_iter()
            .map(|run| {
                let seed = trial_seed(cfg.seed, run);
                let play = |rounds: usize| {
                    run_hybrid_game(
                        Box::new(InformedPolicy::new(params.dim(), k)),
                        &params,
                        seed,
                        cfg.mc_samples,
                        1,
                        rounds,
                        1,
                        GameLimits::default(),
                    )
                };
                Ok(!play(k - 1)?.success && play(k)?.success)
            })
            .collect::<Result<_>>()?;
        let hits = walls.iter().filter(|&&w| w).count() as u64;
        rows.push(TableRow {
            header: ReportHeader::new(&params, cfg.seed, cfg.mc_samples),
            k: params.k,
            epsilon: params.epsilon,
            lipschitz: lip.empirical,
            predictor,
            predictor_over_k: predictor / k as f64,
            wall_at_k: Proportion::at_95(hits, cfg.runs),
        });
    }
    let ratios = rows.iter().filter(|r| r.k >= 2).map(|r| r.predictor_over_k);
    let hi = ratios.clone().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.fold(f64::INFINITY, f64::min);
    let ratio_spread = if lo.is_finite() { hi / lo } else { f64::NAN };
    Ok(MainTable { p, rows, ratio_spread })
}
