use clb_core::hard_instance::HardInstance;
use clb_core::instance::{params_schedule, InstanceParams, ScheduleMode, ScheduleOverrides};
use clb_core::smoothing::{ball_offset, nested_smooth_grad, nested_smooth_value};
use clb_core::StreamId;
use proptest::prelude::*;

fn small_params() -> InstanceParams {
    params_schedule(64, 1, ScheduleMode::Scaled, ScheduleOverrides::with_gamma(0.01)).unwrap()
}

fn point(n: usize, seed: u64) -> Vec<f64> {
    ball_offset(n, 1.0, &mut StreamId::root(seed).rng())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn h_is_one_lipschitz_and_convex(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>(), t in 1usize..=4) {
        let inst = HardInstance::generate(small_params(), seed, 64).unwrap();
        let x = point(64, a);
        let y = point(64, b);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(p, q)| 0.5 * (p + q)).collect();
        let (hx, _) = inst.h_value(t, &x).unwrap();
        let (hy, _) = inst.h_value(t, &y).unwrap();
        let (hm, _) = inst.h_value(t, &mid).unwrap();
        let dist = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!((hx - hy).abs() <= dist * (1.0 + 1e-12) + 1e-14);
        prop_assert!(hm <= 0.5 * (hx + hy) + 1e-12);
    }

    #[test]
    fn levels_are_nested(seed in any::<u64>(), a in any::<u64>()) {
        let inst = HardInstance::generate(small_params(), seed, 64).unwrap();
        let x = point(64, a);
        let mut prev = f64::NEG_INFINITY;
        for t in 1..=4 {
            let (h, j) = inst.h_value(t, &x).unwrap();
            prop_assert!(h >= prev);
            prop_assert!(j <= t);
            prev = h;
        }
    }

    /// A level-t oracle built from only the first t frame vectors answers
    /// bitwise like the full oracle whenever no sample leaves branches <= t.
    #[test]
    fn prefix_oracle_matches_full_oracle_when_branches_stay_low(seed in any::<u64>(), a in any::<u64>(), t in 1usize..4) {
        let full = HardInstance::generate(small_params(), seed, 256).unwrap();
        let prefix = full.with_frame(full.frame().prefix(t)).unwrap();
        let x = point(64, a);
        let s = full.query_stream(1, 0);
        let top = full.oracle_query(4, &x, 1, s, &[]).unwrap();
        let low = prefix.oracle_query(t, &x, 1, s, &[]).unwrap();
        prop_assert_eq!(top.max_branch <= t, top.same_answer(&low));
    }
}

#[test]
fn oracle_stays_close_to_h_with_bounded_gradient() {
    let inst = HardInstance::generate(small_params(), 7, 4096).unwrap();
    let beta = inst.params().beta;
    for s in 0..50 {
        let x = point(64, s);
        let r = inst.oracle_query(4, &x, 1, inst.query_stream(0, s), &[]).unwrap();
        let (h, _) = inst.h_value(4, &x).unwrap();
        assert!((r.value.mean - h).abs() <= beta + 3.0 * r.value.stderr);
        let g = r.grad.unwrap();
        let gn = g.mean.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(gn <= 1.0 + 5.0 * g.stderr, "{gn}");
    }
}

/// The coordinate-ridge oracle and the generic ball-smoothing estimator over
/// the full space estimate the same smoothed function and gradient.
#[test]
fn ridge_oracle_agrees_with_generic_smoothing() {
    let inst = HardInstance::generate(small_params(), 3, 20_000).unwrap();
    let p = inst.params().clone();
    // Near the transition between the first two branches, where h curves.
    let mut coeffs = vec![-0.2; 4];
    coeffs[0] = -p.gamma;
    coeffs[1] = 0.0;
    let x = inst.frame().combine(&coeffs);
    let cfg = inst.smoothing().with_stream(StreamId::root(11));
    let f = |y: &[f64]| inst.h_value(4, y).unwrap().0;
    let g = |y: &[f64]| inst.h_subgrad(4, y).unwrap();
    let generic_v = nested_smooth_value(&f, &cfg, &x).unwrap();
    let generic_g = nested_smooth_grad(&g, &cfg, &x).unwrap();
    let ridge = inst.oracle_query(4, &x, 1, StreamId::root(12), &[]).unwrap();
    let rg = ridge.grad.unwrap();
    let dv = (generic_v.mean - ridge.value.mean).abs();
    assert!(dv <= 4.0 * generic_v.stderr.hypot(ridge.value.stderr) + 1e-15, "value gap {dv}");
    let dg = generic_g.mean.iter().zip(&rg.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dg <= 4.0 * generic_g.stderr.hypot(rg.stderr), "gradient gap {dg}");
    // The transition is resolved: both branches carry weight.
    let w1: f64 = rg.mean.iter().zip(inst.frame().vector(1)).map(|(a, b)| a * b).sum();
    let w2: f64 = rg.mean.iter().zip(inst.frame().vector(2)).map(|(a, b)| a * b).sum();
    assert!(w1 > 0.05 && w2 > 0.05, "{w1} {w2}");
}

#[test]
fn stable_queries_give_identical_answers_at_every_lower_level() {
    let inst = HardInstance::generate(small_params(), 21, 512).unwrap();
    let mut checked = 0;
    for s in 0..40 {
        let x = point(64, 500 + s);
        for t in 0..3 {
            let bs = inst.branch_stable(t, &x, 4, StreamId::root(s)).unwrap();
            if bs.stable() {
                let prefix = inst.with_frame(inst.frame().prefix(t + 1)).unwrap();
                let q = inst.query_stream(2, s);
                let a = inst.oracle_query(4, &x, 1, q, &[]).unwrap();
                let b = prefix.oracle_query(t + 1, &x, 1, q, &[]).unwrap();
                assert!(a.same_answer(&b), "certified stable but answers differ at t = {t}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}
