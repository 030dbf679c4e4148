use approx::assert_relative_eq;
use iwpairs::boundary::{classify, BoundaryKind};
use iwpairs::catalog;
use iwpairs::config::{example_config, Config};
use iwpairs::grid::uniform_grid;
use iwpairs::ito_watanabe::{fundamental_pair, PairNormalization, SolveOptions};
use iwpairs::measure::Side;
use iwpairs::transform::{q_hitting, q_local_time_mean, transform};

#[test]
fn catalog_classes_match_classifier() {
    for ex in catalog::all() {
        let b = ex.spec.interval().reference_point();
        for (side, kind) in &ex.classes {
            let got = classify(&ex.spec, &ex.mu, *side, b).unwrap();
            assert_eq!(got.kind, *kind, "{} {side}", ex.name);
        }
    }
}

#[test]
fn lebesgue_pair_is_exponential() {
    let ex = catalog::lebesgue();
    let grid = uniform_grid(-3.0, 3.0, 61);
    let pair = fundamental_pair(&ex.spec, &ex.mu, &PairNormalization::at(0.0), &grid, &SolveOptions::default()).unwrap();
    let r2 = 2f64.sqrt();
    for (i, &x) in grid.iter().enumerate() {
        assert_relative_eq!(pair.psi.values()[i], (r2 * x).exp(), max_relative = 1e-6);
        assert_relative_eq!(pair.phi.values()[i], (-r2 * x).exp(), max_relative = 1e-6);
    }
}

#[test]
fn inverse_square_pair_is_power() {
    let ex = catalog::inverse_square();
    let grid = uniform_grid(0.2, 5.0, 49);
    let pair = fundamental_pair(&ex.spec, &ex.mu, &PairNormalization::at(1.0), &grid, &SolveOptions::default()).unwrap();
    assert_eq!(pair.left.kind, BoundaryKind::ANatural);
    for (i, &x) in grid.iter().enumerate() {
        assert_relative_eq!(pair.psi.values()[i], x * x, max_relative = 1e-6);
        assert_relative_eq!(pair.phi.values()[i], 1.0 / x, max_relative = 1e-6);
    }
}

#[test]
fn delta_transform_hitting_and_local_time() {
    let ex = catalog::delta_example(0.5).unwrap();
    let grid = uniform_grid(-3.0, 3.0, 61);
    let pair = fundamental_pair(&ex.spec, &ex.mu, &PairNormalization::at(1.0), &grid, &SolveOptions::default()).unwrap();
    let tr = transform(&ex.spec, &pair.psi, 0.0).unwrap();
    // ψ = 1 + 2(x-1)⁺, so s_ψ(∞) - s_ψ(y) = 1/(2ψ(y)) for y ≥ 1.
    assert_relative_eq!(q_hitting(&tr, 2.0, 0.0).unwrap(), 1.0 / 9.0, max_relative = 1e-9);
    assert_relative_eq!(q_hitting(&tr, 0.0, 2.0).unwrap(), 1.0, max_relative = 1e-12);
    assert_relative_eq!(q_local_time_mean(&tr, 1.0).unwrap(), 1.0, max_relative = 1e-9);
}

#[test]
fn example_configs_parse_back() {
    for name in catalog::NAMES {
        let cfg = example_config(name, 0.5).unwrap();
        let again = Config::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg.to_toml().unwrap(), again.to_toml().unwrap());
        let spec = again.spec().unwrap();
        assert!(again.measure("A", &spec).is_ok());
    }
}

#[test]
fn exp_entrance_sides() {
    let ex = catalog::exp_entrance();
    assert_eq!(classify(&ex.spec, &ex.mu, Side::Left, 0.0).unwrap().kind, BoundaryKind::AEntrance);
    assert_eq!(classify(&ex.spec, &ex.mu, Side::Right, -2.0).unwrap().kind, BoundaryKind::ANatural);
}
