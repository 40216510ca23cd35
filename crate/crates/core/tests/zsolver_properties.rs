mod common;

use massweight::zsolver::{
    eta, eta_curvature, good_turing_init, pade_error_factor, phi_prime, psi, psi_curvature,
    solve_z, solve_z_with, BoundaryCase, FixpointMap, InitialGuess, Method, SolverOptions,
};
use massweight::MassTable;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn regular_table() -> impl Strategy<Value = MassTable> {
    any::<u64>().prop_map(|seed| random_regular_table(&mut ChaCha8Rng::seed_from_u64(seed), 20))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn methods_agree(table in regular_table()) {
        let zs: Vec<f64> = Method::ALL
            .iter()
            .map(|&m| solve_z(&table, m).unwrap().z.finite().unwrap())
            .collect();
        for z in &zs[1..] {
            prop_assert!((z - zs[0]).abs() <= 1e-10 * zs[0], "{zs:?}");
        }
    }

    #[test]
    fn root_is_a_fixpoint_above_mass_on_sample(table in regular_table()) {
        let map = FixpointMap::new(&table);
        let s = solve_z(&table, Method::Newton).unwrap();
        let z = s.z.finite().unwrap();
        prop_assert!(z > map.mass_on_sample());
        prop_assert!((map.value(z).unwrap() - z).abs() <= 1e-11 * z);
        prop_assert!(s.residual <= 1e-12);
        prop_assert!(s.iterations <= 30);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unique_sign_change(table in regular_table()) {
        // g(z) = φ(z) − z is positive at P(S), negative far out, and changes sign once.
        let map = FixpointMap::new(&table);
        let ps = map.mass_on_sample();
        let z = solve_z(&table, Method::Newton).unwrap().z.finite().unwrap();
        let g = |x: f64| map.value(x).unwrap() - x;
        prop_assert!(g(ps) > 0.0);
        let grid = geometric_grid(ps, 1e6 * ps, 400);
        let signs: Vec<bool> = grid.iter().map(|&x| g(x) > 0.0).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(changes, 1);
        let first_negative = grid[signs.iter().position(|s| !s).unwrap()];
        prop_assert!(first_negative >= z * (1.0 - 1e-12));
    }

    #[test]
    fn derivative_matches_differences(table in regular_table(), s in 0.0f64..1.0) {
        let map = FixpointMap::new(&table);
        let ps = map.mass_on_sample();
        let z = ps * (1.01 + 100.0 * s * s);
        let h = 1e-4 * z;
        let fd = derivative5(|x| map.value(x).unwrap(), z, h);
        let exact = phi_prime(z, &table).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact, "{fd} vs {exact}");
        prop_assert!(exact > 0.0 && exact < 1.0 + 1e-12);
    }

    #[test]
    fn slope_approaches_occupancy_ratio(table in regular_table()) {
        let map = FixpointMap::new(&table);
        let s = table.summarize();
        let z = 1e6 * map.mass_on_sample();
        let ratio = map.value(z).unwrap() / z;
        let target = s.n_distinct as f64 / s.n_draws as f64;
        prop_assert!((ratio - target).abs() <= 1e-3 * target, "{ratio} vs {target}");
    }

    #[test]
    fn good_turing_start_is_finite_and_above_mass_on_sample(table in regular_table()) {
        let s = table.summarize();
        match good_turing_init(&s).finite() {
            // P(S) N / N may round one ulp below P(S).
            Some(z0) => prop_assert!(z0 >= s.mass_on_sample * (1.0 - f64::EPSILON)),
            None => prop_assert_eq!(s.n_singletons, s.n_draws),
        }
        for init in [InitialGuess::GoodTuring, InitialGuess::MassOnSample] {
            let options = SolverOptions { init, ..SolverOptions::default() };
            prop_assert_eq!(solve_z_with(&table, &options).unwrap().case, BoundaryCase::Regular);
        }
    }

    #[test]
    fn pade_factor_positive(n in 2u64..200, s in 0.001f64..0.999) {
        let t = s * n as f64;
        prop_assert!(pade_error_factor(t, n).unwrap() > 0.0);
        // (1 − t/N)^{N−2} underflows near t = N for large N.
        let c = psi_curvature(t, n).unwrap();
        prop_assert!(c >= 0.0);
        if s <= 0.9 {
            prop_assert!(c > 0.0);
        }
    }

    #[test]
    fn psi_tends_to_eta(t in 0.01f64..20.0) {
        let n = 1_000_000u64;
        let rel = (psi(t, n).unwrap() - eta(t).unwrap()).abs() / eta(t).unwrap();
        prop_assert!(rel <= 1e-4, "{rel}");
    }
}

#[test]
fn factorization_matches_nested_differences() {
    for n in [2u64, 3, 5, 10] {
        for t in geometric_grid(0.05, 0.8 * n as f64, 60) {
            let exact = psi_curvature(t, n).unwrap();
            let fd = curvature_by_differences(t, n);
            assert!((exact - fd).abs() <= 1e-5 * exact, "N = {n}, t = {t}: {exact} vs {fd}");
        }
    }
}

#[test]
fn eta_factorization_matches_differences() {
    for t in geometric_grid(0.05, 20.0, 60) {
        // η varies on a unit scale for large t, so the step stops growing there.
        // Differencing η − 1 = 1/expm1(t) keeps the digits that η ≈ 1 rounds away.
        let h = 1e-3 * t.min(1.0);
        assert!((eta(t).unwrap() - 1.0 - 1.0 / t.exp_m1()).abs() <= 4.0 * f64::EPSILON * eta(t).unwrap());
        let g = |s: f64| s * s * derivative5(|u| 1.0 / u.exp_m1(), s, h);
        let fd = t * t * derivative5(g, t, h);
        let exact = eta_curvature(t).unwrap();
        assert!((exact - fd).abs() <= 1e-5 * exact.abs(), "t = {t}: {exact} vs {fd}");
        assert!(exact > 0.0);
    }
}

#[test]
fn concentrated_and_all_distinct_are_closed_form() {
    let conc = table_from(&[(4, 0.3, 1.0)]);
    let distinct = table_from(&[(1, 0.3, 1.0), (1, 0.2, 1.0), (1, 0.1, 1.0)]);
    for method in Method::ALL {
        let s = solve_z(&conc, method).unwrap();
        assert_eq!((s.z.finite(), s.iterations), (Some(0.3), 0));
        let s = solve_z(&distinct, method).unwrap();
        assert_eq!(s.case, BoundaryCase::AllDistinct);
        assert!(s.trace.is_empty());
    }
}
