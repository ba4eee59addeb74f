use elliptope::certify::{dual_certificate, gram_diagnostics, multipliers, theorem_bound, TolProfile};
use elliptope::manifold::{
    directional_derivative, geodesic_curve, geodesic_second_coefficient, objective, retract, SpherePoint,
    TangentVector,
};
use elliptope::rng::{stream, Tag};
use elliptope::symmat::{format_matrix_market, parse_matrix_market, PowerOptions, SymMatrix};
use proptest::prelude::*;
use rand::Rng;

/// Random symmetric matrix with entries in [-1, 1], about `density` of them nonzero.
fn random_matrix(n: usize, density: f64, seed: u64) -> SymMatrix {
    let mut r = stream(seed, Tag::Probe, 0);
    SymMatrix::from_lower_fn(n, |_, _| {
        if r.random::<f64>() < density {
            r.random_range(-1.0..=1.0)
        } else {
            0.0
        }
    })
}

fn random_point(n: usize, k: usize, seed: u64) -> SpherePoint {
    SpherePoint::random(n, k, &mut stream(seed, Tag::Probe, 1))
}

fn gram_objective(a: &SymMatrix, s: &SpherePoint) -> f64 {
    let mut f = 0.0;
    for i in 0..a.n() {
        for j in 0..a.n() {
            let g: f64 = s.row(i).iter().zip(s.row(j)).map(|(x, y)| x * y).sum();
            f += a.get(i, j) * g;
        }
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_and_sparse_products_agree(n in 1usize..14, density in 0.0f64..1.0, seed in any::<u64>(), k in 1usize..5) {
        let d = random_matrix(n, density, seed);
        let s = d.to_sparse();
        prop_assert!(d.is_dense() && !s.is_dense());
        let x: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + seed as f64 * 1e-3).sin()).collect();
        for (u, v) in d.matvec(&x).unwrap().iter().zip(s.matvec(&x).unwrap()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
        let block: Vec<f64> = (0..n * k).map(|i| ((i as f64) * 1.3).cos()).collect();
        for (u, v) in d.mul_block(&block, k).unwrap().iter().zip(s.mul_block(&block, k).unwrap()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn shifted_storage_agrees_with_dense(n in 2usize..12, seed in any::<u64>(), shift in -1.0f64..1.0) {
        let base = random_matrix(n, 0.3, seed).to_sparse();
        let a = SymMatrix::from_triplets_shifted(n, base.lower_entries(), shift).unwrap();
        let d = a.to_dense();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5).ln()).collect();
        for (u, v) in a.matvec(&x).unwrap().iter().zip(d.matvec(&x).unwrap()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
        prop_assert!((a.op_norm(&PowerOptions::default()).value - d.op_norm(&PowerOptions::default()).value).abs() <= 1e-10);
    }

    #[test]
    fn rayleigh_quotient_is_bounded_by_the_norm(n in 1usize..16, seed in any::<u64>()) {
        let a = random_matrix(n, 0.8, seed);
        let norm = a.op_norm(&PowerOptions::default()).value;
        let mut r = stream(seed, Tag::Probe, 2);
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let xx: f64 = x.iter().map(|v| v * v).sum();
            if xx == 0.0 {
                continue;
            }
            let ax = a.matvec(&x).unwrap();
            let q: f64 = x.iter().zip(&ax).map(|(u, v)| u * v).sum::<f64>() / xx;
            prop_assert!(q.abs() <= norm * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn min_eig_is_below_every_diagonal_entry(n in 1usize..16, seed in any::<u64>()) {
        let a = random_matrix(n, 0.6, seed);
        let m = a.min_eig(1e-10);
        prop_assert!(m.converged);
        for d in a.diagonal() {
            prop_assert!(m.value <= d + 1e-12);
        }
    }

    #[test]
    fn objective_is_the_gram_inner_product(n in 1usize..10, k in 1usize..5, seed in any::<u64>()) {
        let a = random_matrix(n, 0.7, seed);
        let s = random_point(n, k, seed);
        let f = objective(&a, &s).unwrap();
        prop_assert!((f - gram_objective(&a, &s)).abs() <= 1e-12 * (1.0 + n as f64 * n as f64));
    }

    #[test]
    fn central_differences_converge_quadratically(n in 2usize..10, k in 2usize..5, seed in any::<u64>()) {
        let a = random_matrix(n, 0.8, seed);
        let s = random_point(n, k, seed);
        let u = TangentVector::random(&s, &mut stream(seed, Tag::Probe, 3));
        let u = u.scaled(1.0 / u.norm());
        let f = |t: f64| objective(&a, &geodesic_curve(&s, &u, t)).unwrap();
        let d = directional_derivative(&a, &s, &u).unwrap();
        let err = |h: f64| ((f(h) - f(-h)) / (2.0 * h) - d).abs();
        // Halving h divides the error by about four (until rounding dominates).
        let (e1, e2) = (err(1e-2), err(5e-3));
        prop_assert!(e2 <= e1 / 3.0 + 1e-9, "{e1} {e2}");
        let c2 = geodesic_second_coefficient(&a, &s, &u).unwrap();
        let err2 = |h: f64| ((f(h) - 2.0 * f(0.0) + f(-h)) / (2.0 * h * h) - c2).abs();
        let (e1, e2) = (err2(2e-2), err2(1e-2));
        prop_assert!(e2 <= e1 / 3.0 + 1e-6, "{e1} {e2}");
    }

    #[test]
    fn retraction_matches_the_geodesic_to_second_order(n in 1usize..10, k in 2usize..5, seed in any::<u64>(), t in 1e-4f64..0.1) {
        let s = random_point(n, k, seed);
        let u = TangentVector::random(&s, &mut stream(seed, Tag::Probe, 4));
        let u = u.scaled(1.0 / u.norm());
        let r = retract(&s, &u, t).unwrap();
        let g = geodesic_curve(&s, &u, t);
        prop_assert!(r.distance(&g) <= t * t);
        prop_assert!(r.max_row_norm_error() <= 1e-14 && g.max_row_norm_error() <= 1e-14);
    }

    #[test]
    fn dual_bound_dominates_every_point(n in 1usize..10, k in 1usize..5, k2 in 1usize..8, seed in any::<u64>()) {
        let a = random_matrix(n, 0.7, seed);
        let s = random_point(n, k, seed);
        let m = multipliers(&a, &s).unwrap();
        let dual = dual_certificate(&a, &m, &TolProfile::default()).unwrap();
        let mut r = stream(seed, Tag::Probe, 5);
        for _ in 0..5 {
            let other = SpherePoint::random(n, k2, &mut r);
            let f = objective(&a, &other).unwrap();
            prop_assert!(dual.sdp_upper_bound >= f - 1e-9 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn smallest_gram_eigenvalue_is_at_most_n_over_k(n in 1usize..20, k in 1usize..8, seed in any::<u64>()) {
        let s = random_point(n, k, seed);
        let (xi, delta) = gram_diagnostics(&s);
        prop_assert!(xi <= n as f64 / k as f64 + 1e-10);
        prop_assert!(delta <= (n as f64 / k as f64).sqrt() + 1e-10);
    }

    #[test]
    fn multipliers_are_nonnegative_and_sum_to_the_trace(n in 1usize..10, k in 1usize..4, seed in any::<u64>()) {
        let a = random_matrix(n, 0.9, seed);
        let m = multipliers(&a, &random_point(n, k, seed)).unwrap();
        prop_assert!(m.lambda.iter().all(|&l| l >= 0.0));
        prop_assert!((m.lambda.iter().sum::<f64>() - m.trace).abs() <= 1e-12 * (1.0 + m.trace));
    }

    #[test]
    fn theorem_bound_decreases_in_k(n in 1usize..500, norm in 0.1f64..10.0, k in 2usize..50) {
        prop_assert!(theorem_bound(n, k + 1, norm) < theorem_bound(n, k, norm));
    }

    #[test]
    fn matrix_market_round_trip(n in 1usize..10, density in 0.0f64..1.0, seed in any::<u64>()) {
        let d = random_matrix(n, density, seed);
        prop_assert_eq!(parse_matrix_market(&format_matrix_market(&d)).unwrap(), d.clone());
        let s = d.to_sparse();
        prop_assert_eq!(parse_matrix_market(&format_matrix_market(&s)).unwrap(), s);
    }
}

#[test]
fn gram_bound_holds_on_a_hundred_random_points() {
    for seed in 0..100u64 {
        let mut r = stream(seed, Tag::Probe, 6);
        let n = r.random_range(2..40);
        let k = r.random_range(1..=n.min(12));
        let s = SpherePoint::random(n, k, &mut r);
        let (xi, _) = gram_diagnostics(&s);
        assert!(xi <= n as f64 / k as f64 + 1e-10, "seed {seed}: {xi} > {n}/{k}");
    }
}
