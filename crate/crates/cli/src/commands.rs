//! The subcommands. Each is a pure function of the config and its input files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use clb_core::experiments::game::play;
use clb_core::experiments::hiding::hiding_report;
use clb_core::experiments::table::TableConfig;
use clb_core::experiments::toy::{encode_toy, simulate_toy, RandomGuessPolicy, ToyGameSummary};
use clb_core::experiments::wall::{baseline_policy, POLICY_NAMES};
use clb_core::experiments::{
    algorithm_stream, check_optimality, parallel_experiment, reproduce_theorem_main_table, run_hybrid_game,
    trial_seed, wall_experiment, GameLimits, GameTranscript, GuessTheNumbers, HidingReport, OptimalityCheck,
    OutputRule, QueryDistribution, ReportHeader, TableSize, WallRow,
};
use clb_core::hard_instance::{load_instance, save_instance, HardInstance, OracleResponse};
use clb_core::instance::InstanceParams;
use clb_core::optimizers::{run_policy, InstanceOracle};
use clb_core::smoothing::ball_offset;
use clb_core::stats::Proportion;
use clb_core::{ClbError, Result, StreamId};

use crate::config::{Family, Format, ReportKind, RunConfig};
use crate::verify::{self, VerifyReport, VerifyScale};

/// Probes per trial in the branch-stability predicate.
pub const STABILITY_PROBES: usize = 8;

/// Result of a command: text for stdout and whether every checked property held.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub pass: bool,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self { summary, pass: true }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.json"), cfg.to_json())?;
    Ok(())
}

/// The instance named by `--instance`, or a fresh one from the config seed.
fn load(path: &Path) -> Result<(HardInstance, clb_core::hard_instance::InstanceDescriptor)> {
    load_instance(path).map_err(|e| match e {
        ClbError::Io(io) => ClbError::Format(format!("cannot read instance {}: {io}", path.display())),
        other => other,
    })
}

fn instance(cfg: &RunConfig) -> Result<(HardInstance, u64)> {
    match &cfg.instance {
        Some(path) => {
            let (inst, desc) = load(path)?;
            Ok((inst, desc.seed))
        }
        None => Ok((HardInstance::generate(cfg.params()?, cfg.seed, cfg.mc_samples)?, cfg.seed)),
    }
}

/// Parameters, root seed and samples per query for the game and bench commands.
fn game_setup(cfg: &RunConfig) -> Result<(InstanceParams, u64, usize)> {
    match &cfg.instance {
        Some(path) => {
            let (inst, desc) = load(path)?;
            Ok((inst.params().clone(), desc.seed, desc.mc_samples))
        }
        None => Ok((cfg.params()?, cfg.seed, cfg.mc_samples)),
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Outcome> {
    let params = cfg.params()?;
    let inst = HardInstance::generate(params.clone(), cfg.seed, cfg.mc_samples)?;
    prepare_out(cfg)?;
    let desc = save_instance(&inst, cfg.seed, &cfg.out, "instance")?;
    Ok(Outcome::ok(format!(
        "gen: n = {}, p = {}, k = {}, gamma = {:e}, epsilon = {:e}; wrote {} and {}",
        desc.n,
        desc.p,
        desc.k,
        desc.gamma,
        desc.epsilon,
        cfg.out.join("instance.json").display(),
        cfg.out.join(&desc.frame).display()
    )))
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<Outcome> {
    let (inst, seed) = instance(cfg)?;
    let level = cfg.level.unwrap_or(inst.k());
    let x = match &cfg.point {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ClbError::Format(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<Vec<f64>>(&text)
                .map_err(|e| ClbError::Format(format!("{}: {e}", path.display())))?
        }
        None => ball_offset(inst.n(), inst.params().radius, &mut StreamId::root(seed).child("probe-point").rng()),
    };
    let stream = StreamId::root(seed).child("probe");
    let answer: OracleResponse = inst.oracle_query(level, &x, cfg.order, stream, &[])?;
    prepare_out(cfg)?;
    write_json(&cfg.out.join("probe.json"), &answer)?;
    let mut s = serde_json::to_string_pretty(&answer)?;
    s.push('\n');
    Ok(Outcome::ok(s))
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let suites = verify::select_suites(cfg.suite.as_deref())?;
    let mut scale = VerifyScale::default();
    if cfg.trials >= 1000 {
        scale.concentration_trials = cfg.trials;
    }
    let mut reports = Vec::new();
    for s in suites {
        reports.push(match s {
            "softmax" => verify::softmax_suite(cfg.seed, &scale)?,
            "smoothing" => verify::smoothing_suite(cfg.seed, &scale)?,
            "concentration" => verify::concentration_suite(cfg.seed, &scale)?,
            _ => {
                let (mut inst, _) = instance(cfg)?;
                if cfg.corrupt_frame {
                    let mut frame = inst.frame().clone();
                    frame.rows_mut()[0] += 1e-3;
                    inst = inst.with_frame(frame)?;
                }
                verify::instance_suite(&inst, cfg.seed, &scale)?
            }
        });
    }
    let report = VerifyReport { seed: cfg.seed, pass: reports.iter().all(|r| r.pass), suites: reports };
    prepare_out(cfg)?;
    write_json(&cfg.out.join("verify.json"), &report)?;
    let mut s = String::new();
    for suite in &report.suites {
        for p in &suite.properties {
            let verdict = if p.pass { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{verdict} {}: {} ({} checked)", suite.suite, p.name, p.checked);
            if let Some(v) = &p.violation {
                let _ = writeln!(s, "     violating sample: {v}");
            }
        }
    }
    let _ = write!(s, "verify: {}", if report.pass { "all properties hold" } else { "property failure" });
    Ok(Outcome { summary: s, pass: report.pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub family: Family,
    pub algorithm: String,
    pub rounds: usize,
    pub per_round: usize,
    pub runs: u64,
    pub success: Proportion,
    pub divergences: u64,
    pub transcripts: Vec<GameTranscript>,
}

pub fn cmd_game(cfg: &RunConfig) -> Result<Outcome> {
    let runs = cfg.trials.max(1);
    let per_round = cfg.parallel_k;
    let (rounds, transcripts) = match cfg.family {
        Family::Tower => {
            let (params, seed, mc) = game_setup(cfg)?;
            let rounds = cfg.rounds.unwrap_or(params.k_usize());
            let limits =
                GameLimits { per_round_degree: cfg.parallel_cap_degree, per_round_floor: cfg.parallel_cap_floor };
            let t = (0..runs)
                .map(|r| {
                    let policy = baseline_policy(&cfg.algorithm, &params, per_round, algorithm_stream(seed, r))?;
                    run_hybrid_game(policy, &params, trial_seed(seed, r), mc, 1, rounds, per_round, limits)
                })
                .collect::<Result<Vec<_>>>()?;
            (rounds, t)
        }
        Family::Toy => {
            if cfg.algorithm != "random-guess" {
                return Err(ClbError::InvalidParameter(format!(
                    "unknown toy algorithm {:?} (expected random-guess)",
                    cfg.algorithm
                )));
            }
            let rounds = cfg.rounds.unwrap_or(cfg.toy_m);
            let t = (0..runs)
                .map(|r| {
                    let secret = StreamId::root(cfg.seed).child("secret").index(r);
                    let mut hybrid = GuessTheNumbers::new(cfg.toy_m, cfg.toy_n, secret)?;
                    let mut truth = GuessTheNumbers::new(cfg.toy_m, cfg.toy_n, secret)?;
                    let policy = RandomGuessPolicy::new(cfg.toy_m, cfg.toy_n, algorithm_stream(cfg.seed, r));
                    play(Box::new(policy), &mut hybrid, &mut truth, rounds, per_round, encode_toy)
                })
                .collect::<Result<Vec<_>>>()?;
            (rounds, t)
        }
    };
    let successes = transcripts.iter().filter(|t| t.success).count() as u64;
    let divergences = transcripts.iter().filter(|t| t.divergence_round.is_some()).count() as u64;
    let file = GameFile {
        family: cfg.family,
        algorithm: cfg.algorithm.clone(),
        rounds,
        per_round,
        runs,
        success: Proportion::at_95(successes, runs),
        divergences,
        transcripts,
    };
    prepare_out(cfg)?;
    write_json(&cfg.out.join("game.json"), &file)?;
    let first_divergence = file
        .transcripts
        .iter()
        .filter_map(|t| t.divergence_round)
        .min()
        .map_or("none".to_string(), |r| r.to_string());
    Ok(Outcome::ok(format!(
        "game: {} with {rounds} rounds of {per_round}: success {successes}/{runs} (95% CI [{:.4}, {:.4}]), \
         divergences {divergences}, earliest divergence round {first_divergence}",
        cfg.algorithm, file.success.ci_low, file.success.ci_high
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub seed: u64,
    pub queries: usize,
    pub best_value: f64,
    pub verdict: OptimalityCheck,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFile {
    pub header: ReportHeader,
    pub algorithm: String,
    pub budget: usize,
    pub success: Proportion,
    pub runs: Vec<BenchRun>,
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<Outcome> {
    let (params, seed, mc) = game_setup(cfg)?;
    let budget = cfg.budget.unwrap_or(params.k_usize() - 1);
    let runs = cfg.trials.max(1);
    let loaded = match &cfg.instance {
        Some(path) => Some(load(path)?.0),
        None => None,
    };
    prepare_out(cfg)?;
    let mut out = Vec::new();
    for r in 0..runs {
        let inst = match &loaded {
            Some(inst) => inst.clone(),
            None => HardInstance::generate(params.clone(), trial_seed(seed, r), mc)?,
        };
        let mut policy = baseline_policy(&cfg.algorithm, &params, cfg.parallel_k, algorithm_stream(seed, r))?;
        let trace = run_policy(&mut InstanceOracle::new(&inst), policy.as_mut(), budget)?;
        let verdict = check_optimality(&inst, &trace.output, StreamId::root(seed).child("bench-verdict").index(r))?;
        let name = format!("trace_{r}.csv");
        std::fs::write(cfg.out.join(&name), trace.to_csv())?;
        out.push(BenchRun { seed: r, queries: trace.queries(), best_value: trace.best_value, verdict, trace: name });
    }
    let successes = out.iter().filter(|r| r.verdict.optimal).count() as u64;
    let file = BenchFile {
        header: ReportHeader::new(&params, seed, mc),
        algorithm: cfg.algorithm.clone(),
        budget,
        success: Proportion::at_95(successes, runs),
        runs: out,
    };
    write_json(&cfg.out.join("bench.json"), &file)?;
    let best = file.runs.iter().map(|r| r.best_value).fold(f64::INFINITY, f64::min);
    Ok(Outcome::ok(format!(
        "bench: {} with budget {budget}: success {successes}/{runs} (95% CI [{:.4}, {:.4}]), best value {best:e}",
        cfg.algorithm, file.success.ci_low, file.success.ci_high
    )))
}

fn proportion_csv(s: &mut String, label: &str, p: &Proportion) {
    let _ = writeln!(
        s,
        "{label},{},{},{:.16e},{:.16e},{:.16e}",
        p.successes, p.trials, p.estimate, p.ci_low, p.ci_high
    );
}

/// Serialized name of a unit enum variant.
fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_string)).unwrap_or_default()
}

fn hiding_csv(h: &HidingReport) -> String {
    let mut s = String::from("measure,variant,level,successes,trials,estimate,ci_low,ci_high\n");
    for d in &h.delta1 {
        proportion_csv(&mut s, &format!("delta1,{},{}", label(&d.distribution), d.level), &d.delta1_hat);
    }
    for d in &h.delta2 {
        proportion_csv(&mut s, &format!("delta2,{},", label(&d.rule)), &d.delta2_hat);
    }
    s
}

fn rows_csv(rows: &[WallRow]) -> String {
    let mut s = String::from("policy,rounds,per_round,successes,trials,estimate,ci_low,ci_high\n");
    for r in rows {
        proportion_csv(&mut s, &format!("{},{},{}", r.policy, r.rounds, r.per_round), &r.success);
    }
    s
}

const DELTA2_RULES: [OutputRule; 4] =
    [OutputRule::Zero, OutputRule::UniformBall, OutputRule::PrefixWitness, OutputRule::Control];

pub fn cmd_report(cfg: &RunConfig) -> Result<Outcome> {
    let (params, seed, mc) = game_setup(cfg)?;
    let trials = cfg.trials.max(1);
    let (json, csv, summary): (String, String, String) = match cfg.report {
        ReportKind::Hiding => {
            let dists = [QueryDistribution::UniformBall, QueryDistribution::AdversarialCap];
            let h = hiding_report(&params, seed, trials, &dists, &DELTA2_RULES, STABILITY_PROBES, mc)?;
            let summary = format!(
                "hiding: delta1 <= {:.4} (upper {:.4}), delta2 <= {:.4} (upper {:.4}) over {trials} trials",
                h.delta1_hat(),
                h.delta1_upper(),
                h.delta2_hat(),
                h.delta2_upper()
            );
            (serde_json::to_string_pretty(&h)?, hiding_csv(&h), summary)
        }
        ReportKind::Wall => {
            let baselines: Vec<&str> = POLICY_NAMES.iter().copied().filter(|&p| p != "informed").collect();
            let w = wall_experiment(&params, seed, trials, mc, &baselines)?;
            let mut summary = String::from("wall:");
            for r in &w.rows {
                let _ = write!(summary, " {}@{} {}/{}", r.policy, r.rounds, r.success.successes, r.success.trials);
            }
            (serde_json::to_string_pretty(&w)?, rows_csv(&w.rows), summary)
        }
        ReportKind::Parallel => {
            let rules = [OutputRule::Zero, OutputRule::UniformBall, OutputRule::PrefixWitness];
            let h = hiding_report(&params, seed, trials, &[QueryDistribution::UniformBall], &rules, STABILITY_PROBES, mc)?;
            let p = parallel_experiment(&params, seed, trials, cfg.parallel_k, mc, &h, &["random", "informed"])?;
            let summary = format!(
                "parallel: K = {}, bound {:.4} (from upper limits {:.4}, quantum analytic {:.4}), respected: {}",
                p.per_round,
                p.bound,
                p.bound_upper,
                p.quantum_bound_analytic,
                p.respects_bound()
            );
            (serde_json::to_string_pretty(&p)?, rows_csv(&p.rows), summary)
        }
        ReportKind::Table => {
            let sizes: Vec<TableSize> =
                [0.01, 0.004, 0.0015].iter().map(|&g| TableSize { n: params.n, gamma: Some(g) }).collect();
            let tc = TableConfig { seed, mc_samples: mc, runs: trials, lipschitz_pairs: 64 };
            let t = reproduce_theorem_main_table(params.p, &sizes, tc)?;
            let summary = format!("table: {} rows, predictor/k spread {:.4}", t.rows.len(), t.ratio_spread);
            (serde_json::to_string_pretty(&t)?, t.to_csv(), summary)
        }
        ReportKind::Toy => {
            let rows = (1..=cfg.toy_m)
                .map(|rounds| {
                    simulate_toy(cfg.toy_m, cfg.toy_n, rounds, trials, cfg.seed, |trial| {
                        Box::new(RandomGuessPolicy::new(cfg.toy_m, cfg.toy_n, algorithm_stream(cfg.seed, trial)))
                    })
                })
                .collect::<Result<Vec<ToyGameSummary>>>()?;
            let mut csv = String::from("rounds,successes,trials,estimate,ci_low,ci_high\n");
            for r in &rows {
                proportion_csv(&mut csv, &r.rounds.to_string(), &r.success);
            }
            let summary = format!("toy: random guessing over {} rounds, {trials} trials each", rows.len());
            (serde_json::to_string_pretty(&rows)?, csv, summary)
        }
    };
    prepare_out(cfg)?;
    let (name, body) = match cfg.format {
        Format::Json => ("report.json", json + "\n"),
        Format::Csv => ("report.csv", csv),
    };
    std::fs::write(cfg.out.join(name), body)?;
    Ok(Outcome::ok(summary))
}
