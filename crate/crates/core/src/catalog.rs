//! Built-in examples with known answers.

use crate::boundary::BoundaryKind;
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::measure::{Interval, RadonMeasure, Side};

#[derive(Debug, Clone)]
pub struct Example {
    pub name: &'static str,
    pub description: String,
    pub spec: DiffusionSpec,
    pub mu: RadonMeasure,
    /// Expected class of each endpoint.
    pub classes: Vec<(Side, BoundaryKind)>,
    /// Known solutions as `(role, expression in x)`.
    pub solutions: Vec<(&'static str, String)>,
    /// A convenient interior reference point.
    pub reference: f64,
}

pub const NAMES: [&str; 4] = ["delta", "inverse-square", "exp-entrance", "lebesgue"];

/// Brownian motion on ℝ with `μ_A = ε₁/δ`: `ψ = δ + (x-1)⁺`,
/// `φ = δ + (1-x)⁺`.
pub fn delta_example(delta: f64) -> Result<Example> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("δ must be positive, got {delta}")));
    }
    let iv = Interval::real_line();
    Ok(Example {
        name: "delta",
        description: format!("Brownian motion with a single atom of mass 1/{delta} at 1"),
        spec: DiffusionSpec::brownian(iv),
        mu: RadonMeasure::atom(iv, 1.0, 1.0 / delta)?.with_label(format!("ε₁/{delta}")),
        classes: vec![(Side::Left, BoundaryKind::AEntrance), (Side::Right, BoundaryKind::AEntrance)],
        solutions: vec![("psi", format!("{delta} + max(x - 1, 0)")), ("phi", format!("{delta} + max(1 - x, 0)"))],
        reference: 1.0,
    })
}

/// Brownian motion on `(0, ∞)` with `μ_A = 2 y⁻² dy`; `0` is A-natural and
/// `x²` solves the equation.
pub fn inverse_square() -> Example {
    let iv = Interval::new(0.0, f64::INFINITY).expect("valid interval");
    Example {
        name: "inverse-square",
        description: "Brownian motion on (0, ∞) with μ_A = 2/y² dy".into(),
        spec: DiffusionSpec::brownian(iv),
        mu: RadonMeasure::from_expr(iv, "2/y^2").expect("valid density"),
        classes: vec![(Side::Left, BoundaryKind::ANatural), (Side::Right, BoundaryKind::ANatural)],
        solutions: vec![("psi", "x^2".into()), ("phi", "1/x".into())],
        reference: 1.0,
    }
}

/// Brownian motion on ℝ with `μ_A = (1+e^{-y})⁻¹ dy`; `-∞` is A-entrance.
pub fn exp_entrance() -> Example {
    let iv = Interval::real_line();
    Example {
        name: "exp-entrance",
        description: "Brownian motion with μ_A = dy/(1+exp(-y))".into(),
        spec: DiffusionSpec::brownian(iv),
        mu: RadonMeasure::from_expr(iv, "1/(1+exp(-y))").expect("valid density"),
        classes: vec![(Side::Left, BoundaryKind::AEntrance), (Side::Right, BoundaryKind::ANatural)],
        solutions: vec![],
        reference: 0.0,
    }
}

/// Brownian motion on ℝ with `μ_A = m = 2 dy`, so `A_t = t`.
pub fn lebesgue() -> Example {
    let iv = Interval::real_line();
    Example {
        name: "lebesgue",
        description: "Brownian motion with μ_A = 2 dy (A_t = t)".into(),
        spec: DiffusionSpec::brownian(iv),
        mu: RadonMeasure::lebesgue(iv, 2.0).with_label("2 dy"),
        classes: vec![(Side::Left, BoundaryKind::ANatural), (Side::Right, BoundaryKind::ANatural)],
        solutions: vec![("psi", "exp(sqrt(2)*x)".into()), ("phi", "exp(-sqrt(2)*x)".into())],
        reference: 0.0,
    }
}

pub fn by_name(name: &str, delta: f64) -> Result<Example> {
    match name {
        "delta" => delta_example(delta),
        "inverse-square" => Ok(inverse_square()),
        "exp-entrance" => Ok(exp_entrance()),
        "lebesgue" => Ok(lebesgue()),
        _ => Err(Error::Config(format!("unknown example '{name}'; available: {}", NAMES.join(", ")))),
    }
}

pub fn all() -> Vec<Example> {
    NAMES.iter().map(|n| by_name(n, 0.5).expect("catalog entries are valid")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::classify;

    #[test]
    fn expected_classes_hold() {
        for ex in all() {
            for &(side, kind) in &ex.classes {
                let c = classify(&ex.spec, &ex.mu, side, ex.reference).unwrap();
                assert_eq!(c.kind, kind, "{} at {side}", ex.name);
            }
        }
    }

    #[test]
    fn unknown_name() {
        assert!(by_name("nope", 0.5).is_err());
        assert!(delta_example(0.0).is_err());
    }
}
