use elliptope::certify::{check_lemma2, first_order_residual, multipliers, TolProfile};
use elliptope::cli::{overlap, round_hyperplane};
use elliptope::instances::{gen_goe, gen_sbm, gen_z2sync, InstanceSpec, SbmCentering};
use elliptope::manifold::{objective, SpherePoint};
use elliptope::rng::{stream, Tag};
use elliptope::solver::{multi_restart, multi_restart_with_norm, solve, Method, SolverConfig};
use elliptope::symmat::PowerOptions;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn both_methods_stop_at_stationary_points() {
    let a = gen_goe(40, 3).unwrap();
    let norm = a.op_norm(&PowerOptions::default()).value;
    for method in [Method::Coordinate, Method::Rgrad] {
        let cfg = SolverConfig {
            method,
            seed: 11,
            ..SolverConfig::default()
        };
        let m = multi_restart_with_norm(&a, 4, 3, &cfg, norm).unwrap();
        let threshold = cfg.grad_threshold(a.n(), norm);
        for rep in &m.reports {
            assert!(rep.converged, "{method:?}: {:?}", rep.stop_reason);
            assert!(rep.grad_norm_final <= 10.0 * threshold, "{method:?}: {}", rep.grad_norm_final);
            let lam = multipliers(&a, &rep.sigma).unwrap();
            let res = first_order_residual(&a, &rep.sigma, &lam).unwrap();
            assert!(res <= 10.0 * threshold);
            let checks = check_lemma2(&a, &rep.sigma, &lam, norm, &TolProfile::default()).unwrap();
            assert!(checks.all_pass(), "{checks:?}");
            assert!((rep.objective - objective(&a, &rep.sigma).unwrap()).abs() <= 1e-12 * (1.0 + rep.objective.abs()));
        }
    }
}

#[test]
fn restarts_are_reproducible_and_schedule_independent() {
    let a = gen_goe(30, 8).unwrap();
    let cfg = SolverConfig {
        seed: 99,
        ..SolverConfig::default()
    };
    let one = pool(1).install(|| multi_restart(&a, 3, 6, &cfg).unwrap());
    let three = pool(3).install(|| multi_restart(&a, 3, 6, &cfg).unwrap());
    assert_eq!(one, three);
    let again = multi_restart(&a, 3, 6, &cfg).unwrap();
    assert_eq!(one, again);
    let other = multi_restart(&a, 3, 6, &SolverConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(one.reports[0].sigma, other.reports[0].sigma);
}

#[test]
fn rgrad_traces_are_monotone() {
    let a = gen_goe(25, 2).unwrap();
    let norm = a.op_norm(&PowerOptions::default()).value;
    let cfg = SolverConfig {
        method: Method::Rgrad,
        ..SolverConfig::default()
    };
    let start = SpherePoint::random(25, 3, &mut stream(1, Tag::Probe, 0));
    let rep = solve(&a, start, &cfg, norm).unwrap();
    for w in rep.objective_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
}

#[test]
fn shifted_and_dense_sbm_solve_alike() {
    let inst = gen_sbm(120, 8.0, 2.0, 4, SbmCentering::Density).unwrap();
    let shifted = inst.a;
    let dense = shifted.to_dense();
    let cfg = SolverConfig::default();
    let s = multi_restart(&shifted, 5, 2, &cfg).unwrap();
    let d = multi_restart(&dense, 5, 2, &cfg).unwrap();
    for (x, y) in s.reports.iter().zip(&d.reports) {
        assert!((x.objective - y.objective).abs() <= 1e-8 * (1.0 + x.objective.abs()));
    }
}

#[test]
fn instance_specs_parse_from_json() {
    let spec: InstanceSpec = serde_json::from_str(r#"{"family":"sbm","n":50,"a":8,"b":2,"seed":3}"#).unwrap();
    assert_eq!(spec.family(), "sbm");
    assert!(serde_json::from_str::<InstanceSpec>(r#"{"family":"goe","n":5,"bogus":1}"#).is_err());
}

#[test]
fn strong_signal_rounding_recovers_the_planted_signs() {
    let mut overlaps = Vec::new();
    for seed in 0..10u64 {
        let inst = gen_z2sync(400, 3.0, seed).unwrap();
        let truth = inst.truth.unwrap();
        let m = multi_restart(
            &inst.a,
            30,
            1,
            &SolverConfig {
                seed,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        let s = &m.best_report().sigma;
        let (x, _) = round_hyperplane(s, Some(&inst.a), 100, seed);
        overlaps.push(overlap(&x, &truth));
    }
    overlaps.sort_by(f64::total_cmp);
    let median = 0.5 * (overlaps[4] + overlaps[5]);
    assert!(median >= 0.8, "median overlap {median}: {overlaps:?}");
}
