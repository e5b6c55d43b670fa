//! Empirical information-hiding parameters of the tower.
//!
//! `delta_1`: probability that a query answered with `v_{<=t}` known differs
//! from the fully informed answer, over a fresh hidden suffix.
//! `delta_2`: probability that an output chosen without `v_k` is epsilon-optimal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tower::{check_optimality, Decision};
use super::ReportHeader;
use crate::error::{ClbError, Result};
use crate::hard_instance::{HardInstance, Stability};
use crate::instance::{norm, random_unit_vector, InstanceParams, LazyFrame, OrthonormalFrame};
use crate::rng::StreamId;
use crate::smoothing::{ball_offset, SmoothingConfig};
use crate::stats::Proportion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryDistribution {
    UniformBall,
    /// Revealed coordinates pushed to `-(t + 2 - i) gamma`, so every revealed
    /// branch sits one `gamma` below the first hidden one; the rest of the
    /// unit norm goes in a random direction orthogonal to the revealed span.
    AdversarialCap,
}

impl std::str::FromStr for QueryDistribution {
    type Err = ClbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-ball" | "uniform" => Ok(Self::UniformBall),
            "adversarial-cap" | "adversarial" => Ok(Self::AdversarialCap),
            other => Err(ClbError::InvalidParameter(format!("unknown query distribution {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputRule {
    Zero,
    UniformBall,
    /// `-(1/sqrt k) sum_{i<k} v_i`, the best guess from the known prefix.
    PrefixWitness,
    /// The optimum witness, which uses `v_k`; a sanity control, not a legal rule.
    Control,
}

impl OutputRule {
    pub fn is_control(self) -> bool {
        self == Self::Control
    }
}

impl std::str::FromStr for OutputRule {
    type Err = ClbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "uniform-ball" | "uniform" => Ok(Self::UniformBall),
            "prefix-witness" => Ok(Self::PrefixWitness),
            "control" => Ok(Self::Control),
            other => Err(ClbError::InvalidParameter(format!("unknown output rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta1Report {
    pub header: ReportHeader,
    pub level: usize,
    pub distribution: QueryDistribution,
    pub probes_per_trial: usize,
    /// Trials without a stability certificate.
    pub delta1_hat: Proportion,
    pub unstable: u64,
    pub undetermined: u64,
    /// Trials outside the concentration event (reported, not counted as failures).
    pub concentration_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta2Report {
    pub header: ReportHeader,
    pub rule: OutputRule,
    pub control: bool,
    pub delta2_hat: Proportion,
    pub exact_decisions: u64,
    pub mc_decisions: u64,
}

/// `delta_1` per level and `delta_2` for the chosen output rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidingReport {
    pub header: ReportHeader,
    pub trials: u64,
    pub delta1: Vec<Delta1Report>,
    pub delta2: Vec<Delta2Report>,
}

impl HidingReport {
    /// Largest `delta_1` estimate over the measured levels and distributions.
    pub fn delta1_hat(&self) -> f64 {
        self.delta1.iter().map(|r| r.delta1_hat.estimate).fold(0.0, f64::max)
    }

    pub fn delta1_upper(&self) -> f64 {
        self.delta1.iter().map(|r| r.delta1_hat.ci_high).fold(0.0, f64::max)
    }

    /// Largest `delta_2` estimate over the legal output rules.
    pub fn delta2_hat(&self) -> f64 {
        self.delta2.iter().filter(|r| !r.control).map(|r| r.delta2_hat.estimate).fold(0.0, f64::max)
    }

    pub fn delta2_upper(&self) -> f64 {
        self.delta2.iter().filter(|r| !r.control).map(|r| r.delta2_hat.ci_high).fold(0.0, f64::max)
    }
}

/// Frame prefix `v_1..v_t` of the instance with frame seed `seed`.
fn known_prefix(params: &InstanceParams, seed: u64, t: usize) -> Result<OrthonormalFrame> {
    let mut lazy = LazyFrame::new(params.dim(), params.k_usize(), seed)?;
    lazy.reveal_to(t);
    Ok(lazy.prefix())
}

fn instance_with_suffix(
    params: &InstanceParams,
    prefix: &OrthonormalFrame,
    smoothing: SmoothingConfig,
    stream: StreamId,
) -> Result<HardInstance> {
    let frame = LazyFrame::from_prefix(prefix, params.k_usize(), stream)?.into_frame();
    HardInstance::from_parts(params.clone(), frame, smoothing)
}

/// Point of the unit ball whose revealed coordinates are `-(t + 2 - i) gamma`.
fn adversarial_cap(params: &InstanceParams, prefix: &OrthonormalFrame, stream: StreamId) -> Vec<f64> {
    let t = prefix.k();
    let coeffs: Vec<f64> = (1..=t).map(|i| -((t + 2 - i) as f64) * params.gamma).collect();
    let mut x = if t == 0 { vec![0.0; params.dim()] } else { prefix.combine(&coeffs) };
    let used = norm(&x);
    let rest = (params.radius * params.radius - used * used).max(0.0).sqrt();
    let mut d = random_unit_vector(params.dim(), &mut stream.rng());
    for v in prefix.vectors() {
        let c: f64 = d.iter().zip(v).map(|(a, b)| a * b).sum();
        d.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
    }
    let dn = norm(&d);
    x.iter_mut().zip(&d).for_each(|(a, b)| *a += rest * b / dn);
    x
}

/// Frequency with which the level-`t + 1` oracle cannot be certified to
/// answer like the full oracle, with `v_1..v_t` fixed by `seed` and the hidden
/// suffix redrawn every trial.
pub fn measure_delta1(
    params: &InstanceParams,
    seed: u64,
    t: usize,
    trials: u64,
    distribution: QueryDistribution,
    probes: usize,
) -> Result<Delta1Report> {
    let k = params.k_usize();
    if t >= k {
        return Err(ClbError::IndexOutOfRange { index: t, max: k - 1 });
    }
    let header = ReportHeader::new(params, seed, 0);
    if t == k - 1 {
        // The level-k oracle is the full oracle.
        return Ok(Delta1Report {
            header,
            level: t,
            distribution,
            probes_per_trial: 0,
            delta1_hat: Proportion::at_95(0, trials),
            unstable: 0,
            undetermined: 0,
            concentration_misses: 0,
        });
    }
    let prefix = known_prefix(params, seed, t)?;
    let root = StreamId::root(seed).child("delta1").index(t as u64);
    let smoothing = SmoothingConfig::new(params.beta, params.p, 1, root.child("smoothing"))?;
    let outcomes: Vec<(Stability, bool)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let inst = instance_with_suffix(params, &prefix, smoothing, root.child("suffix").index(trial))?;
            let qs = root.child("query").index(trial);
            let x = match distribution {
                QueryDistribution::UniformBall => ball_offset(params.dim(), params.radius, &mut qs.rng()),
                QueryDistribution::AdversarialCap => adversarial_cap(params, &prefix, qs),
            };
            let bs = inst.branch_stable(t, &x, probes, root.child("probe").index(trial))?;
            Ok((bs.verdict, bs.concentration_event))
        })
        .collect::<Result<_>>()?;
    let unstable = outcomes.iter().filter(|(v, _)| matches!(v, Stability::Unstable { .. })).count() as u64;
    let undetermined = outcomes.iter().filter(|(v, _)| *v == Stability::Undetermined).count() as u64;
    let concentration_misses = outcomes.iter().filter(|(_, c)| !c).count() as u64;
    Ok(Delta1Report {
        header,
        level: t,
        distribution,
        probes_per_trial: probes,
        delta1_hat: Proportion::at_95(unstable + undetermined, trials),
        unstable,
        undetermined,
        concentration_misses,
    })
}

/// Frequency with which an output chosen from `v_{<k}` alone is
/// epsilon-optimal, with `v_k` redrawn every trial.
pub fn measure_delta2(
    params: &InstanceParams,
    seed: u64,
    trials: u64,
    rule: OutputRule,
    mc_samples: usize,
) -> Result<Delta2Report> {
    let k = params.k_usize();
    let prefix = known_prefix(params, seed, k - 1)?;
    let root = StreamId::root(seed).child("delta2");
    let smoothing = SmoothingConfig::new(params.beta, params.p, mc_samples, root.child("smoothing"))?;
    let kf = k as f64;
    let outcomes: Vec<(bool, Decision)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let inst = instance_with_suffix(params, &prefix, smoothing, root.child("suffix").index(trial))?;
            let x = match rule {
                OutputRule::Zero => vec![0.0; params.dim()],
                OutputRule::UniformBall => {
                    ball_offset(params.dim(), params.radius, &mut root.child("output").index(trial).rng())
                }
                OutputRule::PrefixWitness if k == 1 => vec![0.0; params.dim()],
                OutputRule::PrefixWitness => prefix.combine(&vec![-1.0 / kf.sqrt(); k - 1]),
                OutputRule::Control => inst.frame().combine(&vec![-1.0 / kf.sqrt(); k]),
            };
            let check = check_optimality(&inst, &x, root.child("mc").index(trial))?;
            Ok((check.optimal, check.decided_by))
        })
        .collect::<Result<_>>()?;
    let successes = outcomes.iter().filter(|(ok, _)| *ok).count() as u64;
    let mc_decisions = outcomes.iter().filter(|(_, d)| *d == Decision::MonteCarlo).count() as u64;
    Ok(Delta2Report {
        header: ReportHeader::new(params, seed, mc_samples),
        rule,
        control: rule.is_control(),
        delta2_hat: Proportion::at_95(successes, trials),
        exact_decisions: trials - mc_decisions,
        mc_decisions,
    })
}

/// `delta_1` at every level `0..k-1` for each distribution, and `delta_2` for each rule.
pub fn hiding_report(
    params: &InstanceParams,
    seed: u64,
    trials: u64,
    distributions: &[QueryDistribution],
    rules: &[OutputRule],
    probes: usize,
    mc_samples: usize,
) -> Result<HidingReport> {
    let mut delta1 = Vec::new();
    for &d in distributions {
        for t in 0..params.k_usize() {
            delta1.push(measure_delta1(params, seed, t, trials, d, probes)?);
        }
    }
    let delta2 = rules
        .iter()
        .map(|&r| measure_delta2(params, seed, trials, r, mc_samples))
        .collect::<Result<_>>()?;
    Ok(HidingReport { header: ReportHeader::new(params, seed, mc_samples), trials, delta1, delta2 })
}
