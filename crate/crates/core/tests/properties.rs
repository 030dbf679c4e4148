use std::sync::Arc;

use approx::assert_abs_diff_eq;
use iwpairs::boundary::classify;
use iwpairs::diffusion::DiffusionSpec;
use iwpairs::grid::{uniform_grid, GridFunction};
use iwpairs::ito_watanabe::{solve, EquationSpec, SolveOptions};
use iwpairs::measure::{Interval, RadonMeasure, Side};
use iwpairs::montecarlo::{simulate_with_pcaf, SimConfig};
use iwpairs::subharmonic::{choquet_decompose, choquet_reconstruct};
use proptest::prelude::*;

fn small_sim(seed: u64, times: Vec<f64>) -> SimConfig {
    SimConfig { dt: 0.01, n_paths: 40, horizon: 3.0, seed, snapshot_times: times, ..SimConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pcaf_is_nondecreasing(seed in 0u64..1000, z in -1.0f64..1.0, w in 0.1f64..5.0) {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let mu = RadonMeasure::atom(Interval::real_line(), z, w).unwrap();
        let ens = simulate_with_pcaf(&spec, 0.0, &small_sim(seed, vec![0.5, 1.0, 2.0, 3.0]), &mu).unwrap();
        for p in &ens.paths {
            let a: Vec<f64> = p.snapshots.iter().map(|s| s.a).collect();
            prop_assert!(a[0] >= 0.0);
            prop_assert!(a.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(p.a_end >= *a.last().unwrap());
        }
    }

    #[test]
    fn pcaf_of_bounded_density_is_bounded_by_time(seed in 0u64..1000, c in 0.1f64..4.0) {
        // ρ ≤ c and m' = 2, so A_t ≤ c t / 2.
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let mu = RadonMeasure::from_expr(Interval::real_line(), &format!("{c}/(1+y^2)")).unwrap();
        let ens = simulate_with_pcaf(&spec, 0.0, &small_sim(seed, vec![1.0, 2.0]), &mu).unwrap();
        for p in &ens.paths {
            for s in &p.snapshots {
                prop_assert!(s.a <= c * s.t / 2.0 * (1.0 + 1e-9));
            }
            prop_assert!(p.a_end <= c * p.t_end / 2.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in 0u64..u64::MAX) {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let mu = RadonMeasure::lebesgue(Interval::real_line(), 2.0);
        let cfg = small_sim(seed, vec![1.0]);
        let a = simulate_with_pcaf(&spec, 0.3, &cfg, &mu).unwrap();
        let b = simulate_with_pcaf(&spec, 0.3, &cfg, &mu).unwrap();
        prop_assert_eq!(a.summary_csv(), b.summary_csv());
    }

    #[test]
    fn single_atom_solution_is_piecewise_linear(a in 0.1f64..3.0, w in 0.1f64..4.0, z in -2.0f64..2.0) {
        let iv = Interval::real_line();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::atom(iv, z, w).unwrap();
        let g = solve(&spec, &mu, &EquationSpec::increasing(a, 0.0), &uniform_grid(-4.0, 4.0, 81), &SolveOptions::default()).unwrap();
        for (&x, &v) in g.grid().iter().zip(g.values()) {
            let exact = a + a * w * (x - z).max(0.0);
            prop_assert!((v - exact).abs() <= 1e-8 * (1.0 + exact), "x = {}: {} vs {}", x, v, exact);
        }
    }

    #[test]
    fn increasing_solution_is_monotone_and_dominates_start(a in 0.1f64..2.0, k in 0.1f64..3.0) {
        let iv = Interval::real_line();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::from_expr(iv, &format!("{k}*exp(-y^2)")).unwrap();
        let g = solve(&spec, &mu, &EquationSpec::increasing(a, 0.0), &uniform_grid(-3.0, 3.0, 61), &SolveOptions::default()).unwrap();
        prop_assert!(g.values().windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(g.values().iter().all(|&v| v >= a - 1e-12));
    }

    #[test]
    fn choquet_recovers_kinks(
        alpha in 0.0f64..1.0,
        beta in -0.5f64..0.5,
        c1 in 0.1f64..2.0,
        c2 in 0.1f64..2.0,
        z1 in -2.0f64..-0.2,
        z2 in 0.2f64..2.0,
    ) {
        let iv = Interval::real_line();
        let spec = DiffusionSpec::brownian(iv);
        let raw = move |x: f64| beta * x + c1 * (x - z1).abs() + c2 * (x - z2).abs();
        let floor = uniform_grid(-3.0, 3.0, 601).into_iter().map(raw).fold(f64::INFINITY, f64::min);
        let shift = 1.0 + alpha - floor;
        let f = move |x: f64| shift + raw(x);
        let g = GridFunction::from_fn(uniform_grid(-3.0, 3.0, 121), spec.scale().clone(), "g", Arc::new(f)).unwrap();
        let d = choquet_decompose(&g, &spec).unwrap();
        let total = d.mu1.mass(-3.0, 3.0).unwrap() + d.mu2.mass(-3.0, 3.0).unwrap();
        prop_assert!((total - 2.0 * (c1 + c2)).abs() < 1e-6 * (c1 + c2), "{} vs {}", total, 2.0 * (c1 + c2));
        for x in [-2.5, -1.0, 0.0, 0.7, 2.9] {
            let r = choquet_reconstruct(&d, &spec, x).unwrap();
            prop_assert!((r - f(x)).abs() < 1e-7 * (1.0 + f(x).abs()));
        }
    }

    #[test]
    fn classification_does_not_depend_on_b(p in 0.0f64..4.0, b1 in 0.2f64..5.0, b2 in 0.2f64..5.0) {
        let iv = Interval::new(0.0, f64::INFINITY).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::from_expr(iv, &format!("y^(-{p})")).unwrap();
        for side in [Side::Left, Side::Right] {
            let k1 = classify(&spec, &mu, side, b1);
            let k2 = classify(&spec, &mu, side, b2);
            match (k1, k2) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.kind, b.kind),
                (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a.map(|c| c.kind), b.map(|c| c.kind)),
            }
        }
    }
}

#[test]
fn lebesgue_measure_gives_clock() {
    let iv = Interval::real_line();
    let spec = DiffusionSpec::brownian(iv);
    let mu = RadonMeasure::lebesgue(iv, 2.0);
    let ens = simulate_with_pcaf(&spec, 0.0, &small_sim(3, vec![1.5]), &mu).unwrap();
    for p in &ens.paths {
        assert_abs_diff_eq!(p.snapshots[0].a, 1.5, epsilon = 1e-9);
    }
}
