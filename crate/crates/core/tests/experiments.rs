use clb_core::experiments::toy::{one_query_exactness, simulate_toy, RandomGuessPolicy};
use clb_core::experiments::wall::{baseline_policy, run_batch};
use clb_core::experiments::*;
use clb_core::instance::{params_schedule, InstanceParams, ScheduleMode, ScheduleOverrides};
use clb_core::optimizers::{QueryPolicy, ZeroPolicy};
use clb_core::{ClbError, StreamId};

fn scaled(n: u64, gamma: f64) -> InstanceParams {
    params_schedule(n, 1, ScheduleMode::Scaled, ScheduleOverrides::with_gamma(gamma)).unwrap()
}

#[test]
fn zero_policy_never_diverges_and_never_succeeds() {
    let params = scaled(4096, 0.01);
    let k = params.k_usize();
    let tr = run_hybrid_game(Box::new(ZeroPolicy::new(4096)), &params, 3, 512, 1, k - 1, 1, GameLimits::default())
        .unwrap();
    assert_eq!(tr.divergence_round, None);
    assert!(!tr.success && !tr.hybrid_success);
    assert!(tr.sub_budget);
    assert!(tr.rounds.iter().all(|r| r.queries.iter().all(|q| q.agrees)));
}

#[test]
fn informed_strategy_needs_every_round() {
    let params = scaled(16384, 0.004);
    assert_eq!(params.k, 8);
    let short = run_batch("informed", &params, 9, 8, 7, 1, 1024).unwrap();
    let full = run_batch("informed", &params, 9, 8, 8, 1, 1024).unwrap();
    assert_eq!(short.success.successes, 0);
    assert_eq!(full.success.successes, 8);
}

#[test]
fn games_reject_budget_violations() {
    let params = scaled(4096, 0.01);
    let zero = || Box::new(ZeroPolicy::new(4096));
    let over_rounds = run_hybrid_game(zero(), &params, 1, 64, 1, 5, 1, GameLimits::default());
    assert!(matches!(over_rounds, Err(ClbError::Budget(_))));
    let limits = GameLimits { per_round_degree: 1.0, per_round_floor: 2 };
    let over_cap = run_hybrid_game(zero(), &params, 1, 64, 1, 3, 5, limits);
    assert!(matches!(over_cap, Err(ClbError::Budget(_))));
    // A policy asking for more queries than allowed in a round.
    let random = baseline_policy("random", &params, 4, StreamId::root(1)).unwrap();
    let too_many = run_hybrid_game(random, &params, 1, 64, 1, 3, 2, GameLimits::default());
    assert!(matches!(too_many, Err(ClbError::Budget(_))));
}

#[test]
fn games_are_reproducible() {
    let params = scaled(4096, 0.01);
    let play_once = || {
        let pol = baseline_policy("random", &params, 3, algorithm_stream(5, 0)).unwrap();
        run_hybrid_game(pol, &params, trial_seed(5, 0), 256, 1, 3, 3, GameLimits::default()).unwrap()
    };
    assert_eq!(play_once(), play_once());
}

#[test]
fn top_level_hiding_is_trivial() {
    let params = scaled(4096, 0.01);
    let r = measure_delta1(&params, 1, params.k_usize() - 1, 50, QueryDistribution::UniformBall, 2).unwrap();
    assert_eq!(r.delta1_hat.successes, 0);
    // A single-vector instance under the exact schedule reveals nothing either.
    let exact = params_schedule(1 << 24, 1, ScheduleMode::PaperExact, ScheduleOverrides::default()).unwrap();
    assert_eq!(exact.k, 1);
    let r = measure_delta1(&exact, 1, 0, 10_000, QueryDistribution::UniformBall, 2).unwrap();
    assert_eq!(r.delta1_hat.successes, 0);
}

/// Pushing the revealed coordinates down reveals at least as much as uniform queries.
#[test]
fn adversarial_queries_reveal_at_least_as_much() {
    let params = scaled(4096, 0.01);
    for t in 1..3 {
        let u = measure_delta1(&params, 2, t, 200, QueryDistribution::UniformBall, 2).unwrap();
        let a = measure_delta1(&params, 2, t, 200, QueryDistribution::AdversarialCap, 2).unwrap();
        assert!(a.delta1_hat.estimate >= u.delta1_hat.estimate, "t = {t}: {a:?} vs {u:?}");
    }
}

#[test]
fn output_rules_without_the_last_vector_fail() {
    let params = scaled(16384, 0.01);
    for rule in [OutputRule::Zero, OutputRule::UniformBall, OutputRule::PrefixWitness] {
        let r = measure_delta2(&params, 4, 100, rule, 512).unwrap();
        assert_eq!(r.delta2_hat.successes, 0, "{rule:?}");
    }
    let control = measure_delta2(&params, 4, 100, OutputRule::Control, 512).unwrap();
    assert!(control.control);
    assert_eq!(control.delta2_hat.successes, 100);
}

#[test]
fn single_vector_instance_has_a_one_round_wall() {
    let params = scaled(16384, 0.05);
    assert_eq!(params.k, 1);
    let zero_rounds = run_batch("informed", &params, 1, 5, 0, 1, 256).unwrap();
    let one_round = run_batch("informed", &params, 1, 5, 1, 1, 256).unwrap();
    assert_eq!(zero_rounds.success.successes, 0);
    assert_eq!(one_round.success.successes, 5);
}

#[test]
fn every_one_query_strategy_matches_its_exact_success() {
    let report = one_query_exactness(2, 2, 400, 7).unwrap();
    assert_eq!(report.checks.len(), 256);
    assert_eq!(report.mismatches(), 0);
}

#[test]
fn random_guessing_respects_the_hiding_bound() {
    let (m, n) = (8, 16);
    let sim = simulate_toy(m, n, m - 1, 10_000, 3, |t| {
        Box::new(RandomGuessPolicy::new(m, n, StreamId::root(77).index(t))) as Box<dyn QueryPolicy<_, _>>
    })
    .unwrap();
    let bound = 1.0 / n as f64 + (m - 1) as f64 / n as f64;
    assert!(sim.success.ci_low <= bound, "{sim:?}");
    // Exact law: from j known entries a round reveals j + 1 + G of them, G the
    // run of lucky random guesses; leftover entries are guessed at the end.
    let q = 1.0 / n as f64;
    let mut known = vec![0.0; m + 1];
    known[0] = 1.0;
    for _ in 0..m - 1 {
        let mut next = vec![0.0; m + 1];
        for (j, &pj) in known.iter().enumerate() {
            if j == m {
                next[m] += pj;
                continue;
            }
            for g in 0..m - j {
                let to = j + 1 + g;
                let pg = if to == m { q.powi(g as i32) } else { q.powi(g as i32) * (1.0 - q) };
                next[to] += pj * pg;
            }
        }
        known = next;
    }
    let exact: f64 = known.iter().enumerate().map(|(j, p)| p * q.powi((m - j) as i32)).sum();
    assert!(sim.success.ci_low <= exact && exact <= sim.success.ci_high, "exact {exact}, {sim:?}");
}

#[test]
fn analytic_bounds() {
    assert_eq!(parallel_bound(0.0, 0.01, 4, 64), 0.01);
    assert!((parallel_bound(1e-4, 0.0, 4, 64) - 0.0256).abs() < 1e-15);
    assert_eq!(parallel_bound(0.1, 0.0, 4, 64), 1.0);
    assert!((quantum_bound_analytic(1e-4, 0.0, 4) - 0.16).abs() < 1e-12);
}

#[test]
fn predictor_is_scale_free_in_k() {
    use clb_core::experiments::table::rate_predictor;
    // (L / eps)^(1/2) ln(L / eps)^(-2/3) for p = 1.
    let v = rate_predictor(1, 1e4, 1.0, 0.1);
    assert!((v - 1e5f64.sqrt() * 1e5f64.ln().powf(-2.0 / 3.0)).abs() < 1e-9);
}
