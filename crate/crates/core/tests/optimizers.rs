use clb_core::hard_instance::HardInstance;
use clb_core::instance::{params_schedule, ScheduleMode, ScheduleOverrides};
use clb_core::optimizers::*;
use clb_core::StreamId;
use proptest::prelude::*;

fn abs_sum(x: &[f64]) -> (f64, Vec<f64>) {
    let v = x.iter().map(|a| (a - 0.1).abs()).sum();
    let g = x.iter().map(|a| if *a > 0.1 { 1.0 } else { -1.0 }).collect();
    (v, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_method_queries_inside_the_ball(n in 1usize..12, steps in 1usize..30, seed in any::<u64>()) {
        let mut oracle = FnOracle::new(n, 0.5, abs_sum);
        let traces = [
            subgradient_descent(&mut oracle, 0.5, steps, StepRule::default()).unwrap(),
            nesterov_agd(&mut oracle, 10.0, 0.5, steps).unwrap(),
            random_search(&mut oracle, 0.5, steps, StreamId::root(seed)).unwrap(),
        ];
        for t in &traces {
            prop_assert!(t.queries() <= steps);
            for p in &t.points {
                prop_assert!(p.iter().map(|a| a * a).sum::<f64>().sqrt() <= 0.5 * (1.0 + 1e-12));
            }
            for w in t.rows.windows(2) {
                prop_assert!(w[1].best_value <= w[0].best_value);
            }
        }
    }
}

#[test]
fn trace_csv_has_one_line_per_query() {
    let mut oracle = FnOracle::new(3, 1.0, abs_sum);
    let t = subgradient_descent(&mut oracle, 1.0, 7, StepRule::default()).unwrap();
    let csv = t.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,value_mean,value_stderr,grad_norm,best_value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.split(',').count() == 5));
    assert!(rows[0].starts_with("1,"));
}

#[test]
fn oversized_parallel_rounds_are_truncated_to_the_budget() {
    let mut oracle = FnOracle::new(4, 1.0, abs_sum);
    let mut policy = RandomSearchPolicy::parallel(4, 1.0, 10, StreamId::root(2));
    let t = run_policy(&mut oracle, &mut policy, 15).unwrap();
    assert_eq!(t.queries(), 15);
}

#[test]
fn baselines_stall_on_the_hard_instance_within_k_minus_one_queries() {
    let params = params_schedule(4096, 1, ScheduleMode::Scaled, ScheduleOverrides::with_gamma(0.01)).unwrap();
    let inst = HardInstance::generate(params.clone(), 4, 1024).unwrap();
    let thr = params.optimality_threshold();
    let k = params.k_usize();
    let mut oracle = InstanceOracle::new(&inst);
    let t = subgradient_descent(&mut oracle, 1.0, k - 1, StepRule::default()).unwrap();
    assert!(t.best_value > thr, "{} <= {thr}", t.best_value);
    let mut oracle = InstanceOracle::new(&inst);
    let mut informed = InformedPolicy::new(params.dim(), k);
    let t = run_policy(&mut oracle, &mut informed, k).unwrap();
    let (h, _) = inst.h_value(k, &t.output).unwrap();
    assert!(h + params.beta <= thr, "informed output h = {h}");
}
