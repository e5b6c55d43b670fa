use clb_core::instance::{
    haar_frame, params_schedule, read_frame, write_frame, LazyFrame, ScheduleMode, ScheduleOverrides,
};
use clb_core::hard_instance::{load_instance, save_instance, HardInstance};
use clb_core::stats::ks_two_sample;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_orders_its_scales(log_n in 10u32..40, p in 1u32..4) {
        let params = params_schedule(1u64 << log_n, p, ScheduleMode::Scaled, ScheduleOverrides::default());
        if let Ok(params) = params {
            prop_assert!(params.rho < params.beta && params.beta < params.gamma && params.gamma < 1.0);
            prop_assert!(params.singlestep_lhs() < params.gamma);
            prop_assert!(params.k >= 1);
        }
    }

    #[test]
    fn frames_are_orthonormal(n in 3usize..64, k in 1usize..8, seed in any::<u64>()) {
        let k = k.min(n);
        let frame = haar_frame(n, k, seed).unwrap();
        prop_assert!(frame.orthonormality_error() <= 1e-12);
    }

    #[test]
    fn frame_container_roundtrips(n in 1usize..40, k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(n);
        let frame = haar_frame(n, k, seed).unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        prop_assert_eq!(read_frame(buf.as_slice()).unwrap(), frame);
    }

    #[test]
    fn descriptor_json_roundtrips(log_n in 10u32..20, gamma in 1e-4f64..0.05, seed in any::<u64>()) {
        let overrides = ScheduleOverrides::with_gamma(gamma);
        let Ok(params) = params_schedule(1u64 << log_n, 1, ScheduleMode::Scaled, overrides) else {
            return Ok(());
        };
        let dir = tempfile::tempdir().unwrap();
        let inst = HardInstance::generate(params.clone(), seed, 64).unwrap();
        let desc = save_instance(&inst, seed, dir.path(), "inst").unwrap();
        let (back, back_desc) = load_instance(&dir.path().join("inst.json")).unwrap();
        prop_assert_eq!(back_desc, desc);
        prop_assert_eq!(back.params(), &params);
        prop_assert_eq!(back.frame(), inst.frame());
    }

    #[test]
    fn lazy_reveal_equals_eager_sampling(n in 3usize..50, k in 1usize..6, stop in 0usize..6, seed in any::<u64>()) {
        let k = k.min(n);
        let mut lazy = LazyFrame::new(n, k, seed).unwrap();
        lazy.reveal_to(stop);
        prop_assert_eq!(lazy.into_frame(), haar_frame(n, k, seed).unwrap());
    }
}

#[test]
fn truncated_frame_container_is_rejected() {
    let frame = haar_frame(5, 2, 1).unwrap();
    let mut buf = Vec::new();
    write_frame(&mut buf, &frame).unwrap();
    assert!(read_frame(&buf[..buf.len() - 3]).is_err());
    buf.push(0);
    assert!(read_frame(buf.as_slice()).is_err());
}

/// Haar frames on n = 8, k = 3: every coordinate of every vector has the same
/// law, and so does the projection on a fixed random unit vector.
#[test]
fn lazy_frames_are_rotation_invariant() {
    let trials = 4000;
    let mut first = Vec::new();
    let mut third = Vec::new();
    let mut rotated = Vec::new();
    let u = {
        let f = haar_frame(8, 1, 99).unwrap();
        f.vector(1).to_vec()
    };
    for s in 0..trials {
        let f = haar_frame(8, 3, 1000 + s).unwrap();
        first.push(f.vector(1)[0]);
        third.push(f.vector(3)[5]);
        rotated.push(f.vector(2).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>());
    }
    let (_, p13) = ks_two_sample(&first, &third);
    let (_, p1r) = ks_two_sample(&first, &rotated);
    assert!(p13 > 1e-3, "coordinate laws differ, p = {p13}");
    assert!(p1r > 1e-3, "rotated projection law differs, p = {p1r}");
    // E[v_1[0]^2] = 1/n.
    let second_moment = first.iter().map(|a| a * a).sum::<f64>() / trials as f64;
    assert!((second_moment - 0.125).abs() < 0.01, "{second_moment}");
}

/// The Gram matrix of a lazily revealed frame is the identity, and pairwise
/// inner products of different vectors' coordinates are uncorrelated.
#[test]
fn lazy_frames_have_identity_gram_and_uncorrelated_vectors() {
    let trials = 3000;
    let mut cross = 0.0;
    for s in 0..trials {
        let mut lazy = LazyFrame::new(8, 3, s).unwrap();
        lazy.reveal_to(3);
        let f = lazy.into_frame();
        assert!(f.orthonormality_error() <= 1e-12);
        cross += f.vector(1)[0] * f.vector(2)[0];
    }
    // E[v_1[0] v_2[0]] = 0 with standard error about 1/(8 sqrt(trials)).
    let mean = cross / trials as f64;
    assert!(mean.abs() < 4.0 / (8.0 * (trials as f64).sqrt()), "{mean}");
}
