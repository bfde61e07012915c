//! Property tests for the backup operator and value iteration.

use proptest::prelude::*;
use reachavoid::backup::{backup_sweep, value_iteration, Init, SolveConfig};
use reachavoid::{builtin_benchmark, sup_norm_diff, GridSpec, ProblemSpec, SolveMode, ValueField};

fn di2d(gamma: f64) -> ProblemSpec {
    builtin_benchmark("di2d").unwrap().with_gamma(gamma)
}

fn grid(count: usize) -> GridSpec {
    GridSpec::uniform(2, -3.0, 3.0, count).unwrap()
}

fn random_field(g: &GridSpec) -> impl Strategy<Value = ValueField> {
    let g = g.clone();
    proptest::collection::vec(-20.0f64..20.0, g.total_nodes()).prop_map(move |v| ValueField::new(g.clone(), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backup_is_a_contraction(
        gamma in 0.0f64..0.999,
        (a, b) in (random_field(&grid(9)), random_field(&grid(9))),
    ) {
        let spec = di2d(gamma);
        let d0 = sup_norm_diff(&a, &b).unwrap();
        let d1 = sup_norm_diff(&backup_sweep(&a, &spec, 0.0).unwrap(), &backup_sweep(&b, &spec, 0.0).unwrap()).unwrap();
        let scale = a.max_abs().max(b.max_abs());
        prop_assert!(d1 <= gamma * d0 + 8.0 * f64::EPSILON * scale);
    }

    #[test]
    fn max_min_commutes_with_clipping(a in proptest::collection::vec(-1e3f64..1e3, 1..20), b in -1e3f64..1e3) {
        let lhs = a.iter().map(|&ai| ai.min(b)).fold(f64::NEG_INFINITY, f64::max);
        let rhs = a.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(b);
        prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fixed_point_and_envelope(gamma in 0.3f64..0.95) {
        let spec = di2d(gamma);
        let g = grid(15);
        let report = value_iteration(&spec, &g, &SolveConfig::default()).unwrap();
        prop_assert!(report.converged);
        let swept = backup_sweep(&report.field, &spec, 0.0).unwrap();
        prop_assert!(sup_norm_diff(&swept, &report.field).unwrap() <= 1e-6);
        for flat in 0..g.total_nodes() {
            let x = g.node_state(flat);
            let (r, c) = (spec.reward_at(&x), spec.constraint_at(&x));
            let v = report.field.values()[flat];
            prop_assert!(r.min(c) <= v && v <= c);
        }
        let scale = report.field.max_abs();
        for w in report.residuals.windows(2) {
            prop_assert!(w[1] <= gamma * w[0] + 4.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn penalty_is_monotone(gamma in 0.5f64..0.95, l1 in 0.0f64..0.05, dl in 1e-4f64..0.05, iters in 1usize..200) {
        let spec = di2d(gamma);
        let g = grid(13);
        let cfg = SolveConfig::default().with_tolerance(f64::MIN_POSITIVE).with_max_iterations(iters);
        let v1 = value_iteration(&spec, &g, &cfg.clone().with_lambda(l1)).unwrap().field;
        let v2 = value_iteration(&spec, &g, &cfg.with_lambda(l1 + dl)).unwrap().field;
        for (a, b) in v1.values().iter().zip(v2.values()) {
            prop_assert!(b <= a);
        }
        prop_assert!(v2.positive_count() <= v1.positive_count());
    }

    #[test]
    fn sandwich_holds_at_every_iterate(gamma in 0.5f64..0.95, lambda in 0.0f64..0.1, iters in 1usize..300) {
        let spec = di2d(gamma);
        let g = grid(13);
        let cfg = SolveConfig::default().with_tolerance(f64::MIN_POSITIVE).with_max_iterations(iters);
        let v = value_iteration(&spec, &g, &cfg.clone()).unwrap().field;
        let q = value_iteration(&spec, &g, &cfg.with_lambda(lambda)).unwrap().field;
        let slack = 1e-12;
        for (a, b) in v.values().iter().zip(q.values()) {
            prop_assert!(a - lambda / (1.0 - gamma) - slack <= *b);
            prop_assert!(*b <= a - lambda + slack);
        }
    }

    #[test]
    fn viability_and_reach_signs(gamma in 0.5f64..0.99, iters in 1usize..150) {
        let cfg = SolveConfig::default().with_tolerance(f64::MIN_POSITIVE).with_max_iterations(iters);
        let mut spec = di2d(gamma);
        spec.mode = SolveMode::ViabilityKernel;
        for init in [Init::MinRc, Init::Zero] {
            let v = value_iteration(&spec, &grid(11), &cfg.clone().with_init(init)).unwrap().field;
            prop_assert!(v.values().iter().all(|&x| x <= 0.0));
        }
        spec.mode = SolveMode::BackwardReach;
        let v = value_iteration(&spec, &grid(11), &cfg.with_init(Init::Zero)).unwrap().field;
        prop_assert!(v.values().iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn lipschitz_bound_between_adjacent_nodes() {
    let spec = di2d(0.9);
    let g = grid(41);
    assert!(spec.value_is_lipschitz(&g));
    let l = spec.lipschitz_on(&g).value_bound();
    let h = g.max_cell_width();
    let field = value_iteration(&spec, &g, &SolveConfig::default()).unwrap().field;
    for i in 0..41 {
        for j in 0..41 {
            let here = g.flat_index(&[i, j]).unwrap();
            for (di, dj) in [(1, 0), (0, 1)] {
                if i + di >= 41 || j + dj >= 41 {
                    continue;
                }
                let there = g.flat_index(&[i + di, j + dj]).unwrap();
                let gap = (field.values()[here] - field.values()[there]).abs();
                assert!(gap <= l * h + 2.0 * h * l, "({i},{j}) gap {gap}");
            }
        }
    }
}

#[test]
fn result_independent_of_thread_count() {
    let spec = di2d(0.95);
    let g = grid(31);
    let solve = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| value_iteration(&spec, &g, &SolveConfig::default()).unwrap())
    };
    let a = solve(1);
    let b = solve(3);
    assert_eq!(a.iterations, b.iterations);
    let bits = |f: &ValueField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.field), bits(&b.field));
}

#[test]
fn membership_sets_agree_across_discounts() {
    // slow-reach states at gamma 0.9 carry values near 0.9^t and lose their sign to
    // interpolation on coarse grids; the mismatch shrinks with refinement
    let g = grid(121);
    let tol = 1e-6;
    let band = 10.0 * tol;
    let a = value_iteration(&di2d(0.9), &g, &SolveConfig::default()).unwrap().field;
    let b = value_iteration(&di2d(0.99), &g, &SolveConfig::default()).unwrap().field;
    let (mut agree, mut total) = (0usize, 0usize);
    for (x, y) in a.values().iter().zip(b.values()) {
        if x.abs() <= band || y.abs() <= band {
            continue;
        }
        total += 1;
        if (*x > 0.0) == (*y > 0.0) {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
}
