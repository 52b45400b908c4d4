mod common;

use common::*;
use fluidpert::density::{stationary_law, total_mass};
use fluidpert::model::censor_zero_phases;
use fluidpert::numerics::{
    self, conv_integral, group_inverse, matrix_exp, solve_sylvester, Matrix,
};
use fluidpert::perturb::psi1_generator;
use fluidpert::{expand, solve_psi, validate_model, Error, NewtonOptions, PerturbationSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

fn small_matrix(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn row_sum_tolerance_is_enforced(seed in any::<u64>(), rel in prop_oneof![1e-15f64..0.9e-12, 1.1e-12f64..1e-11, 1e-11f64..1e-6]) {
        let model = fuzz_model(seed);
        let a = model.original_a();
        let c = model.original_c();
        let mut bumped = a.clone();
        // Row 0 then sums to delta; the infinity norm moves by at most delta.
        let delta = rel * numerics::norm_inf(&a);
        let j = (0..a.ncols()).find(|&j| j != 0 && a[(0, j)] > 0.0).unwrap();
        bumped[(0, j)] += delta;
        let res = validate_model(&bumped, &c);
        if rel < 1e-12 {
            prop_assert!(res.is_ok());
        } else {
            prop_assert!(matches!(res, Err(Error::NotAGenerator(_))));
        }
    }

    #[test]
    fn censoring_is_identity_without_zero_phases(seed in any::<u64>(), np in 1usize..4, nm in 1usize..4) {
        let model = model_with_split(seed, np, 0, nm);
        let q = censor_zero_phases(&model).unwrap();
        prop_assert_eq!(q.generator(), model.a().clone());
    }

    #[test]
    fn psi_is_invariant_under_relabelling(seed in any::<u64>()) {
        let model = fuzz_model(seed);
        let n = model.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(seed));
        let a = model.original_a();
        let c = model.original_c();
        let pa = Matrix::from_fn(n, n, |i, j| a[(order[i], order[j])]);
        let pc: Vec<f64> = order.iter().map(|&i| c[i]).collect();
        let permuted = validate_model(&pa, &pc).unwrap();

        let opts = NewtonOptions::default();
        let psi = solve_psi(&model, &opts).unwrap().psi;
        let ppsi = solve_psi(&permuted, &opts).unwrap().psi;
        // Map each permuted canonical index back to the original phase.
        let rows = permuted.original_indices(fluidpert::Side::Plus);
        let cols = permuted.original_indices(fluidpert::Side::Minus);
        let orig_rows = model.original_indices(fluidpert::Side::Plus);
        let orig_cols = model.original_indices(fluidpert::Side::Minus);
        for (pi, &r) in rows.iter().enumerate() {
            for (pj, &s) in cols.iter().enumerate() {
                let i = orig_rows.iter().position(|&x| x == order[r]).unwrap();
                let j = orig_cols.iter().position(|&x| x == order[s]).unwrap();
                prop_assert!((ppsi[(pi, pj)] - psi[(i, j)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sylvester_matches_fixed_point(seed in any::<u64>(), p in 1usize..5, q in 1usize..5) {
        // K = −(diag + small), U = −(diag + small): the splitting
        // X ← D_K⁻¹(H − N_K X − X U) contracts, giving an independent answer.
        let mut r = rng(seed);
        let mut k = Matrix::from_fn(p, p, |_, _| r.random_range(-0.2..0.2));
        let mut u = Matrix::from_fn(q, q, |_, _| r.random_range(-0.2..0.2));
        for i in 0..p { k[(i, i)] = -r.random_range(3.0..5.0); }
        for i in 0..q { u[(i, i)] = -r.random_range(3.0..5.0); }
        let h = Matrix::from_fn(p, q, |_, _| r.random_range(-1.0..1.0));
        let x = solve_sylvester(&k, &u, &h).unwrap();
        let mut y = Matrix::zeros(p, q);
        for _ in 0..200 {
            y = Matrix::from_fn(p, q, |i, j| {
                let mut s = h[(i, j)];
                for l in 0..p { if l != i { s -= k[(i, l)] * y[(l, j)]; } }
                for l in 0..q { if l != j { s -= y[(i, l)] * u[(l, j)]; } }
                s / (k[(i, i)] + u[(j, j)])
            });
        }
        prop_assert!(numerics::max_abs(&(&x - &y)) <= 1e-10);
    }

    #[test]
    fn exponential_inverts(m in small_matrix(4), scale in 0.1f64..8.0) {
        let m = m * scale;
        let prod = matrix_exp(&m) * matrix_exp(&(-&m));
        let e = matrix_exp(&m);
        let tol = 1e-12 * numerics::norm_inf(&e) * numerics::norm_inf(&matrix_exp(&(-&m)));
        prop_assert!(numerics::max_abs(&(prod - Matrix::identity(4, 4))) <= tol.max(1e-12));
    }

    #[test]
    fn conv_integral_matches_quadrature(seed in any::<u64>(), x in 0.1f64..3.0) {
        let mut r = rng(seed);
        let p = 3;
        let mut k = Matrix::from_fn(p, p, |_, _| r.random_range(0.0..0.5));
        for i in 0..p { k[(i, i)] = -1.5; }
        let d = Matrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
        let exact = conv_integral(&k, &d, x);
        let mut quad = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                quad[(i, j)] = simpson(|s| (matrix_exp(&(&k * (x - s))) * &d * matrix_exp(&(&k * s)))[(i, j)], 0.0, x, 200);
            }
        }
        prop_assert!(numerics::max_abs(&(exact - quad)) <= 1e-8);
    }

    #[test]
    fn group_inverse_identities(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..8usize);
        let m = random_generator(&mut r, n);
        let pi = numerics::stationary_vector(&m).unwrap();
        let g = group_inverse(&m, &pi).unwrap();
        prop_assert!(numerics::max_abs(&(&m * &g * &m - &m)) <= 1e-10);
        prop_assert!(numerics::max_abs(&(&g * &m * &g - &g)) <= 1e-10);
        prop_assert!(numerics::max_abs(&(&m * &g - &g * &m)) <= 1e-10);
    }

    #[test]
    fn newton_history_is_monotone_and_iterates_stay_in_unit_interval(seed in any::<u64>()) {
        let model = fuzz_model(seed);
        let sol = solve_psi(&model, &NewtonOptions::default()).unwrap();
        prop_assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(sol.psi.iter().all(|&v| (-1e-14..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn every_valid_direction_dispatches(seed in any::<u64>(), signs in prop::collection::vec(prop::bool::ANY, 1..4)) {
        let model = model_with_split(seed, 2, 3, 2);
        let sol = solve_psi(&model, &NewtonOptions::default()).unwrap();
        let signs: Vec<f64> = signs.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let spec = PerturbationSpec::rate(&model, rate_direction(seed, &model, &signs)).unwrap();
        let exp = expand(&model, &sol, &spec).unwrap();
        prop_assert_eq!(exp.regime, spec.regime());
        prop_assert!(exp.psi1.iter().all(|v| v.is_finite()));

        let gspec = PerturbationSpec::generator(&model, generator_direction(seed, &model)).unwrap();
        let gexp = expand(&model, &sol, &gspec).unwrap();
        prop_assert_eq!(gexp.psi1, psi1_generator(&model, &sol, &gspec).unwrap());
    }

    #[test]
    fn stationary_law_has_unit_mass(seed in any::<u64>()) {
        let model = fuzz_model(seed);
        let sol = solve_psi(&model, &NewtonOptions::default()).unwrap();
        let law = stationary_law(&model, &sol).unwrap();
        prop_assert!((total_mass(&law).unwrap() - 1.0).abs() <= 1e-10);
    }
}
