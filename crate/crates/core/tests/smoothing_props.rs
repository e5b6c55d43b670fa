use clb_core::smoothing::{
    ball_offset, ball_point, nested_smooth_samples, nested_smooth_value, smoothing_property_suite, RidgeSampler,
    SmoothingConfig,
};
use clb_core::stats::ks_two_sample;
use clb_core::StreamId;
use proptest::prelude::*;

fn cfg(beta: f64, p: u32, samples: usize, seed: u64) -> SmoothingConfig {
    SmoothingConfig::new(beta, p, samples, StreamId::root(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_points_stay_in_the_ball(n in 1usize..50, eta in 0.0f64..2.0, seed in any::<u64>()) {
        let center = vec![0.3; n];
        let y = ball_point(&center, eta, StreamId::root(seed)).unwrap();
        let d = y.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d <= eta * (1.0 + 1e-12));
    }

    #[test]
    fn constants_and_linear_functions_are_reproduced(
        n in 1usize..20, p in 1u32..4, seed in any::<u64>(), c in -3.0f64..3.0,
    ) {
        let cfg = cfg(0.1, p, 64, seed);
        let x = vec![0.2; n];
        let konst = nested_smooth_value(&|_: &[f64]| c, &cfg, &x).unwrap();
        prop_assert_eq!(konst.mean, c);
        prop_assert_eq!(konst.stderr, 0.0);
        let lin = |y: &[f64]| y.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum::<f64>();
        let est = nested_smooth_value(&lin, &cfg, &x).unwrap();
        prop_assert!((est.mean - lin(&x)).abs() <= 1e-12 * (1.0 + lin(&x).abs()) * n as f64);
    }

    #[test]
    fn smoothing_is_linear_sample_by_sample(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let cfg = cfg(0.2, 2, 100, seed);
        let x = vec![0.1, -0.4, 0.3];
        let f = |y: &[f64]| y.iter().map(|v| v.abs()).sum::<f64>();
        let g = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>();
        let h = |y: &[f64]| a * f(y) + b * g(y);
        let sf = nested_smooth_samples(&f, &cfg, &x).unwrap();
        let sg = nested_smooth_samples(&g, &cfg, &x).unwrap();
        let sh = nested_smooth_samples(&h, &cfg, &x).unwrap();
        for ((u, v), w) in sf.iter().zip(&sg).zip(&sh) {
            prop_assert!((a * u + b * v - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn ridge_draws_stay_within_the_support(n in 2usize..40, k in 1usize..5, p in 1u32..4, seed in any::<u64>()) {
        let k = k.min(n);
        let radii: Vec<f64> = (1..=p).map(|i| 0.5f64.powi(i as i32)).collect();
        let support: f64 = radii.iter().sum();
        let s = RidgeSampler::new(n, k, radii).unwrap();
        let mut out = vec![0.0; k];
        let mut rng = StreamId::root(seed).rng();
        for _ in 0..20 {
            s.draw(&mut rng, &mut out);
            prop_assert!(out.iter().map(|a| a * a).sum::<f64>().sqrt() <= support * (1.0 + 1e-12));
        }
    }
}

/// The ridge sampler reproduces the law of the first k coordinates of a
/// nested ball displacement in R^n.
#[test]
fn ridge_marginals_match_explicit_ball_sampling() {
    let (n, k) = (10, 3);
    let radii = vec![0.5, 0.25];
    let s = RidgeSampler::new(n, k, radii.clone()).unwrap();
    let mut rng = StreamId::root(1).rng();
    let mut rng2 = StreamId::root(2).rng();
    let (mut ridge_c, mut ridge_r, mut ball_c, mut ball_r) = (vec![], vec![], vec![], vec![]);
    let mut out = vec![0.0; k];
    for _ in 0..20_000 {
        s.draw(&mut rng, &mut out);
        ridge_c.push(out[1]);
        ridge_r.push(out.iter().map(|a| a * a).sum::<f64>().sqrt());
        let mut e = vec![0.0; n];
        for &eta in &radii {
            let d = ball_offset(n, eta, &mut rng2);
            e.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        ball_c.push(e[1]);
        ball_r.push(e[..k].iter().map(|a| a * a).sum::<f64>().sqrt());
    }
    let (_, pc) = ks_two_sample(&ridge_c, &ball_c);
    let (_, pr) = ks_two_sample(&ridge_r, &ball_r);
    assert!(pc > 1e-3, "coordinate law differs, p = {pc}");
    assert!(pr > 1e-3, "projected norm law differs, p = {pr}");
}

#[test]
fn property_suite_passes_on_a_convex_lipschitz_function() {
    let cfg = cfg(0.1, 2, 20_000, 5);
    let f = |y: &[f64]| y.iter().map(|v| v.abs()).sum::<f64>() / (y.len() as f64).sqrt();
    let points: Vec<Vec<f64>> = (0..100).map(|i| ball_offset(6, 1.0, &mut StreamId::root(100 + i).rng())).collect();
    let report = smoothing_property_suite(&f, 1.0, true, &cfg, &points).unwrap();
    for c in &report.checks {
        assert!(c.status != clb_core::smoothing::CheckStatus::Fail, "{} failed: {}", c.name, c.detail);
    }
}
