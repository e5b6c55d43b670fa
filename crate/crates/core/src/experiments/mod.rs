//! Measurements of how much an oracle query reveals, and the games that turn
//! those measurements into query lower bounds.

pub mod game;
pub mod hiding;
pub mod table;
pub mod tower;
pub mod toy;
pub mod wall;

use serde::{Deserialize, Serialize};

use crate::instance::InstanceParams;
use crate::rng::StreamId;

pub use game::{play, GameTranscript, HidingFamily, QueryDigest, RoundRecord};
pub use hiding::{
    measure_delta1, measure_delta2, Delta1Report, Delta2Report, HidingReport, OutputRule, QueryDistribution,
};
pub use table::{reproduce_theorem_main_table, MainTable, TableRow, TableSize};
pub use tower::{check_optimality, run_hybrid_game, GameLimits, OptimalityCheck, TowerFamily};
pub use toy::GuessTheNumbers;
pub use wall::{parallel_experiment, wall_experiment, ParallelReport, WallReport, WallRow};

/// Note attached to every report: the thresholds used are empirical policy.
pub const THRESHOLD_NOTE: &str =
    "concentration threshold 10 sqrt(ln n / n), optimality certificate -0.7/sqrt(k) + eps + 3 stderr; thresholds are empirical policy";

/// Everything needed to replay an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub params: InstanceParams,
    pub seed: u64,
    pub mc_samples: usize,
    pub antithetic: bool,
    pub note: String,
}

impl ReportHeader {
    pub fn new(params: &InstanceParams, seed: u64, mc_samples: usize) -> Self {
        Self { params: params.clone(), seed, mc_samples, antithetic: true, note: THRESHOLD_NOTE.into() }
    }
}

/// Frame seed of trial `trial` under root `seed`, kept apart from algorithm streams.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    StreamId::root(seed).child("instance").index(trial).key()
}

/// Stream for an algorithm's own randomness in trial `trial`.
pub fn algorithm_stream(seed: u64, trial: u64) -> StreamId {
    StreamId::root(seed).child("algorithm").index(trial)
}

/// Analytic parallel-round bound `delta_2 + m K delta_1`.
pub fn parallel_bound(delta1: f64, delta2: f64, m: usize, per_round: usize) -> f64 {
    (delta2 + (m * per_round) as f64 * delta1).min(1.0)
}

/// Analytic bound `delta_2 + 4 m sqrt(delta_1)` for quantum algorithms; not simulated.
pub fn quantum_bound_analytic(delta1: f64, delta2: f64, m: usize) -> f64 {
    (delta2 + 4.0 * m as f64 * delta1.sqrt()).min(1.0)
}
