//! The smoothed softmax tower as an information-hiding family, played with
//! lazily revealed frame vectors.

use serde::{Deserialize, Serialize};

use super::game::{fnv1a_words, play, GameTranscript, HidingFamily, QueryDigest};
use crate::error::{ClbError, Result};
use crate::hard_instance::{HardInstance, OracleResponse};
use crate::instance::{norm, InstanceParams, LazyFrame};
use crate::optimizers::PointPolicy;
use crate::rng::StreamId;
use crate::smoothing::{SmoothedEstimate, SmoothingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// `h(x) - beta` already exceeds the threshold.
    ExactNotOptimal,
    /// `h(x) + beta` is already below the threshold.
    ExactOptimal,
    MonteCarlo,
    OutsideDomain,
}

/// Epsilon-optimality verdict for a point of a complete instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCheck {
    pub h_value: f64,
    pub threshold: f64,
    pub estimate: Option<SmoothedEstimate>,
    pub decided_by: Decision,
    pub optimal: bool,
}

/// Whether `x` is epsilon-optimal for `g`: `g(x) <= -0.7/sqrt(k) + eps`, up to
/// `3 stderr` of Monte Carlo slack. Since `|g - h| <= beta` the exact value of
/// `h` settles most points without sampling.
pub fn check_optimality(inst: &HardInstance, x: &[f64], stream: StreamId) -> Result<OptimalityCheck> {
    let p = inst.params();
    let threshold = p.optimality_threshold();
    if norm(x) > p.radius * (1.0 + 1e-12) {
        return Ok(OptimalityCheck {
            h_value: f64::NAN,
            threshold,
            estimate: None,
            decided_by: Decision::OutsideDomain,
            optimal: false,
        });
    }
    let k = inst.k();
    let (h_value, _) = inst.h_value(k, x)?;
    let (decided_by, estimate, optimal) = if h_value - p.beta > threshold {
        (Decision::ExactNotOptimal, None, false)
    } else if h_value + p.beta <= threshold {
        (Decision::ExactOptimal, None, true)
    } else {
        let est = inst.oracle_query(k, x, 0, stream, &[])?.value;
        (Decision::MonteCarlo, Some(est), est.mean <= threshold + 3.0 * est.stderr)
    };
    Ok(OptimalityCheck { h_value, threshold, estimate, decided_by, optimal })
}

/// Hard instance whose frame vectors are revealed on demand.
///
/// The hybrid copy starts empty and reveals `v_i` at round `i`; the true copy
/// holds the whole frame. Both draw `v_i` from the same substream, so they
/// describe the same function.
#[derive(Debug, Clone)]
pub struct TowerFamily {
    params: InstanceParams,
    seed: u64,
    order: u32,
    smoothing: SmoothingConfig,
    frame: LazyFrame,
    inst: Option<HardInstance>,
}

impl TowerFamily {
    pub fn hybrid(params: &InstanceParams, seed: u64, mc_samples: usize, order: u32) -> Result<Self> {
        if order > params.p {
            return Err(ClbError::InvalidParameter(format!("oracle order {order} exceeds p = {}", params.p)));
        }
        let smoothing =
            SmoothingConfig::new(params.beta, params.p, mc_samples, StreamId::root(seed).child("smoothing"))?;
        let frame = LazyFrame::new(params.dim(), params.k_usize(), seed)?;
        Ok(Self { params: params.clone(), seed, order, smoothing, frame, inst: None })
    }

    pub fn truth(params: &InstanceParams, seed: u64, mc_samples: usize, order: u32) -> Result<Self> {
        let mut fam = Self::hybrid(params, seed, mc_samples, order)?;
        fam.reveal(params.k_usize())?;
        Ok(fam)
    }

    pub fn instance(&self) -> Option<&HardInstance> {
        self.inst.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl HidingFamily for TowerFamily {
    type Query = Vec<f64>;
    type Answer = OracleResponse;

    fn steps(&self) -> usize {
        self.params.k_usize()
    }

    fn reveal(&mut self, level: usize) -> Result<()> {
        let target = level.min(self.steps());
        if target > self.frame.revealed() || self.inst.is_none() {
            self.frame.reveal_to(target.max(1));
            self.inst = Some(HardInstance::from_parts(self.params.clone(), self.frame.prefix(), self.smoothing)?);
        }
        Ok(())
    }

    fn answer(&self, level: usize, query: &Vec<f64>, round: usize, index: usize) -> Result<OracleResponse> {
        let inst = self.inst.as_ref().ok_or_else(|| ClbError::InvalidParameter("nothing revealed yet".into()))?;
        let stream = inst.query_stream(round as u64, index as u64);
        inst.oracle_query(level, query, self.order, stream, &[])
    }

    fn same_answer(a: &OracleResponse, b: &OracleResponse) -> bool {
        a.same_answer(b)
    }

    fn is_correct(&self, output: &Vec<f64>) -> Result<bool> {
        let inst = self.inst.as_ref().filter(|i| i.is_complete()).ok_or_else(|| {
            ClbError::InvalidParameter("correctness needs the full frame".into())
        })?;
        Ok(check_optimality(inst, output, StreamId::root(self.seed).child("verdict"))?.optimal)
    }

    fn digest(query: &Vec<f64>, answer: &OracleResponse, agrees: bool) -> QueryDigest {
        QueryDigest {
            hash: fnv1a_words(encode_point(query)),
            size: norm(query),
            answer: answer.value.mean,
            agrees,
        }
    }
}

pub fn encode_point(x: &Vec<f64>) -> Vec<u64> {
    x.iter().map(|a| a.to_bits()).collect()
}

/// Limits on a game: the per-round cap is `ceil(k^degree)` queries, at least `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameLimits {
    pub per_round_degree: f64,
    pub per_round_floor: usize,
}

impl Default for GameLimits {
    fn default() -> Self {
        Self { per_round_degree: 3.0, per_round_floor: 64 }
    }
}

impl GameLimits {
    pub fn per_round_cap(&self, k: usize) -> usize {
        ((k as f64).powf(self.per_round_degree).ceil() as usize).max(self.per_round_floor)
    }
}

/// Lazy-sampling hybrid game on the tower with frame seed `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_hybrid_game(
    policy: Box<PointPolicy>,
    params: &InstanceParams,
    seed: u64,
    mc_samples: usize,
    order: u32,
    rounds: usize,
    per_round: usize,
    limits: GameLimits,
) -> Result<GameTranscript> {
    let k = params.k_usize();
    if rounds > k {
        return Err(ClbError::Budget(format!("{rounds} rounds exceed k = {k}")));
    }
    let cap = limits.per_round_cap(k);
    if per_round > cap {
        return Err(ClbError::Budget(format!("{per_round} queries per round exceed the cap {cap}")));
    }
    let mut hybrid = TowerFamily::hybrid(params, seed, mc_samples, order)?;
    let mut truth = TowerFamily::truth(params, seed, mc_samples, order)?;
    play(policy, &mut hybrid, &mut truth, rounds, per_round, encode_point)
}
