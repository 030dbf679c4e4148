//! The diffusion obtained from an Itô–Watanabe pair `(g, A)` by the change
//! of measure `g(X_T) e^{-A_T} / g(x)`: scale `s_g(dx) = g⁻² ds`, speed
//! `g² m`.

use std::fmt;
use std::sync::Arc;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::measure::{improper_integral, CutoffSchedule, RadonMeasure, Side, Verdict};
use crate::quadrature::{integrate_finite, Tolerance};
use crate::scale::{ScaleFunction, ScaleMap};
use crate::subharmonic::s_derivative;

/// `s_g(x) = ∫_c^x g(y)⁻² s(dy)`, tabulated at the grid of `g`.
struct GScale {
    base: ScaleFunction,
    g: GridFunction,
    knots: Vec<f64>,
    cum: Vec<f64>,
}

impl fmt::Debug for GScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GScale(g = {})", self.g.label)
    }
}

fn tol() -> Tolerance {
    Tolerance { abs: 1e-15, rel: 1e-13 }
}

impl GScale {
    fn integrand(&self, y: f64) -> f64 {
        let g = self.g.eval(y);
        self.base.derivative(y).unwrap_or(f64::NAN) / (g * g)
    }

    fn piece(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        sign * integrate_finite(&|y| self.integrand(y), lo, hi, tol()).unwrap_or(f64::NAN)
    }

    /// Integral from the end knot on `side` to scale value `s_x` when `g` is
    /// continued affinely in `s` beyond the grid.
    fn affine_tail(&self, side: Side, s_x: f64) -> f64 {
        let n = self.knots.len();
        let (i, slope) = match side {
            Side::Left => (0, self.g.slopes().map(|s| s[0].0)),
            Side::Right => (n - 1, self.g.slopes().map(|s| s[n - 1].1)),
        };
        let s_grid = self.g.s_grid();
        let g0 = self.g.values()[i];
        let m = slope.unwrap_or_else(|| match side {
            Side::Left => (self.g.values()[1] - g0) / (s_grid[1] - s_grid[0]),
            Side::Right => (g0 - self.g.values()[n - 2]) / (s_grid[n - 1] - s_grid[n - 2]),
        });
        let d = s_x - s_grid[i];
        if d.is_infinite() {
            return if m * d.signum() > 0.0 { 1.0 / (g0 * m) } else if m == 0.0 { d } else { f64::NAN };
        }
        let end = g0 + m * d;
        if !(end > 0.0) {
            return f64::NAN;
        }
        d / (g0 * end)
    }
}

impl ScaleMap for GScale {
    fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0] {
            if self.g.closed_form().is_some() {
                return self.cum[0] + self.piece(self.knots[0], x);
            }
            return self.cum[0] + self.affine_tail(Side::Left, self.base.eval(x));
        }
        if x > self.knots[n - 1] {
            if self.g.closed_form().is_some() {
                return self.cum[n - 1] + self.piece(self.knots[n - 1], x);
            }
            return self.cum[n - 1] + self.affine_tail(Side::Right, self.base.eval(x));
        }
        let i = self.knots.partition_point(|&k| k <= x).clamp(1, n) - 1;
        self.cum[i] + self.piece(self.knots[i], x)
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        let d = self.base.derivative(x)?;
        let g = self.g.eval(x);
        Some(d / (g * g))
    }

    fn describe(&self) -> String {
        format!("∫ ({})⁻² ds", self.g.label)
    }
}

#[derive(Debug, Clone)]
pub struct TransformedDiffusion {
    pub base: DiffusionSpec,
    pub g: GridFunction,
    pub anchor: f64,
    pub spec_q: DiffusionSpec,
    /// `(λ₁, λ₂)` when `g = λ₁ψ_A + λ₂φ_A` is known.
    pub provenance: Option<(f64, f64)>,
}

/// `g²·m`-type reweighting of a measure.
fn g_squared(g: &GridFunction, mu: &RadonMeasure, label: &str) -> Result<RadonMeasure> {
    let gg = g.clone();
    mu.reweighted(Arc::new(move |y| gg.eval(y).powi(2)), label)
}

pub fn transform(base: &DiffusionSpec, g: &GridFunction, c: f64) -> Result<TransformedDiffusion> {
    let (at, min) = g.min_value();
    if !(min > 0.0) {
        return Err(Error::VanishingG { at, value: min });
    }
    let iv = base.interval();
    if !iv.contains(c) {
        return Err(Error::Precondition(format!("anchor {c} is outside the state interval")));
    }
    if base.scale().derivative(c).is_none() {
        return Err(Error::Unsupported("the transformed scale needs s' of the base diffusion".into()));
    }
    let g_at_c = g.eval(c);
    if !(g_at_c > 0.0) {
        return Err(Error::VanishingG { at: c, value: g_at_c });
    }
    let mut knots: Vec<f64> = g.grid().iter().copied().filter(|x| iv.contains(*x)).chain([c]).collect();
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let mut gs = GScale { base: base.scale().clone(), g: g.clone(), knots, cum: vec![] };
    let ic = gs.knots.iter().position(|&k| k == c).unwrap();
    let mut cum = vec![0.0; gs.knots.len()];
    for i in ic + 1..gs.knots.len() {
        cum[i] = cum[i - 1] + gs.piece(gs.knots[i - 1], gs.knots[i]);
    }
    for i in (0..ic).rev() {
        cum[i] = cum[i + 1] - gs.piece(gs.knots[i], gs.knots[i + 1]);
    }
    if let Some(i) = cum.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { at: gs.knots[i], context: "transformed scale".into() });
    }
    gs.cum = cum;
    let limit = |side: Side| -> Result<f64> {
        let n = gs.knots.len();
        let (k, base_lim, sign) = match side {
            Side::Left => (0, base.s_left(), -1.0),
            Side::Right => (n - 1, base.s_right(), 1.0),
        };
        if g.closed_form().is_none() {
            let v = gs.affine_tail(side, base_lim);
            if v.is_nan() {
                return Err(Error::VanishingG { at: iv.endpoint(side), value: 0.0 });
            }
            return Ok(gs.cum[k] + v);
        }
        let s_measure = base.scale().measure()?;
        let f = |y: f64| {
            let v = g.eval(y);
            1.0 / (v * v)
        };
        let verdict = improper_integral(&s_measure, &f, side, gs.knots[k], &CutoffSchedule::default())?
            .decided(&format!("transformed scale limit at the {side} endpoint"))?;
        Ok(match verdict.kind {
            Verdict::Finite(v) => gs.cum[k] + sign * v,
            _ => sign * f64::INFINITY,
        })
    };
    let (left, right) = (limit(Side::Left)?, limit(Side::Right)?);
    let scale = ScaleFunction::new(Arc::new(gs), iv, Some(left), Some(right))?;
    let speed = g_squared(g, base.speed(), &format!("({})²", g.label))?;
    let spec_q = DiffusionSpec::with_scale_and_speed(format!("{} under Q[{}]", base.name, g.label), scale, speed);
    Ok(TransformedDiffusion { base: base.clone(), g: g.clone(), anchor: c, spec_q, provenance: None })
}

impl TransformedDiffusion {
    pub fn with_provenance(mut self, lambda1: f64, lambda2: f64) -> TransformedDiffusion {
        self.provenance = Some((lambda1, lambda2));
        self
    }

    pub fn s_g(&self, x: f64) -> f64 {
        self.spec_q.s(x)
    }

    pub fn s_g_limits(&self) -> (f64, f64) {
        (self.spec_q.s_left(), self.spec_q.s_right())
    }

    /// `g² m`.
    pub fn speed_q(&self) -> &RadonMeasure {
        self.spec_q.speed()
    }
}

/// `μ_g = g² μ`.
pub fn revuz_under_q(t: &TransformedDiffusion, mu: &RadonMeasure) -> Result<RadonMeasure> {
    g_squared(&t.g, mu, &format!("({})²", t.g.label))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformTransience {
    pub transient: bool,
    /// `Q^x(X_{ζ-} = r)`
    pub to_right: f64,
    /// `Q^x(X_{ζ-} = ℓ)`
    pub to_left: f64,
    /// Agreement with the recorded `(λ₁, λ₂)`: `λ₂ = 0` forces escape to
    /// `r` and `λ₁ = 0` escape to `ℓ`.
    pub provenance_consistent: Option<bool>,
}

pub fn transience_report(t: &TransformedDiffusion, x: f64) -> Result<TransformTransience> {
    let r = t.spec_q.is_transient(x);
    let provenance_consistent = t.provenance.map(|(l1, l2)| {
        let near = |a: f64, b: f64| (a - b).abs() < 1e-9;
        match (l1 > 0.0, l2 > 0.0) {
            (true, false) => near(r.to_right, 1.0),
            (false, true) => near(r.to_left, 1.0),
            _ => r.to_right > 0.0 && r.to_left > 0.0,
        }
    });
    Ok(TransformTransience { transient: r.transient, to_right: r.to_right, to_left: r.to_left, provenance_consistent })
}

/// `Q^y(T_x < ∞) = u_Q(y, x) / u_Q(x, x)`.
pub fn q_hitting(t: &TransformedDiffusion, y: f64, x: f64) -> Result<f64> {
    let num = t.spec_q.potential_density(y, x)?;
    let den = t.spec_q.potential_density(x, x)?;
    if !(den > 0.0) {
        return Err(Error::NonFinite { at: x, context: "u_Q(x, x) vanishes".into() });
    }
    Ok((num / den).min(1.0))
}

/// Mean of the total local time at `y` under `Q^y`: `2 u_Q(y,y) / s_g'(y)`,
/// with the right derivative of `s_g`.
pub fn q_local_time_mean(t: &TransformedDiffusion, y: f64) -> Result<f64> {
    let u = t.spec_q.potential_density(y, y)?;
    let d = t
        .spec_q
        .scale()
        .derivative(y)
        .ok_or_else(|| Error::Unsupported("transformed scale has no derivative".into()))?;
    Ok(2.0 * u / d)
}

/// Extra drift `σ²(x) g'(x)/g(x)` of the transformed diffusion, with
/// `σ² = 2/(m' s')`; equals `g'/g` for Brownian motion.
pub fn extra_drift(t: &TransformedDiffusion, x: f64) -> Result<f64> {
    let m = t
        .base
        .speed_density()
        .ok_or_else(|| Error::UnsupportedSpec("speed measure has no density".into()))?(x);
    let dg = s_derivative(&t.g, x, Side::Right)?;
    Ok(2.0 * dg / (m * t.g.eval(x)))
}

/// `g(X_T) e^{-A_T} / g(x₀)`.
pub fn likelihood_ratio(g: &GridFunction, x0: f64, x_t: f64, a_t: f64) -> Result<f64> {
    let g0 = g.eval(x0);
    if !(g0 > 0.0) {
        return Err(Error::VanishingG { at: x0, value: g0 });
    }
    let gt = g.eval(x_t);
    if gt < 0.0 {
        return Err(Error::VanishingG { at: x_t, value: gt });
    }
    Ok(gt * (-a_t).exp() / g0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::uniform_grid;
    use crate::measure::Interval;

    fn delta_psi(delta: f64) -> (DiffusionSpec, GridFunction) {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let g = GridFunction::from_expr(
            uniform_grid(-5.0, 5.0, 41),
            spec.scale().clone(),
            &Expr::parse(&format!("{delta} + max(x - 1, 0)")).unwrap(),
        )
        .unwrap();
        (spec, g)
    }

    fn s_delta(delta: f64, x: f64) -> f64 {
        (x.min(1.0) - 1.0) / (delta * delta) + 1.0 / delta - 1.0 / (delta + x.max(1.0) - 1.0)
    }

    #[test]
    fn delta_scale_and_hitting() {
        let delta = 0.5;
        let (spec, g) = delta_psi(delta);
        let t = transform(&spec, &g, 1.0).unwrap();
        for x in [-7.0, -2.0, 0.0, 0.9, 1.0, 1.3, 4.0, 12.0] {
            assert!((t.s_g(x) - s_delta(delta, x)).abs() < 1e-10, "{x}");
        }
        assert_eq!(t.s_g_limits().0, f64::NEG_INFINITY);
        assert!((t.s_g_limits().1 - 1.0 / delta).abs() < 1e-10);
        assert!((q_hitting(&t, 2.0, 0.0).unwrap() - 1.0 / 9.0).abs() < 1e-10);
        assert!((q_local_time_mean(&t, 1.0).unwrap() - 2.0 * delta).abs() < 1e-10);
        let rep = transience_report(&t.clone().with_provenance(1.0, 0.0), 0.0).unwrap();
        assert!(rep.transient && rep.to_right == 1.0 && rep.provenance_consistent == Some(true));
        assert!((extra_drift(&t, 2.0).unwrap() - 1.0 / (delta + 1.0)).abs() < 1e-9);
        assert_eq!(extra_drift(&t, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_transform() {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let g = GridFunction::from_expr(uniform_grid(-1.0, 1.0, 5), spec.scale().clone(), &Expr::parse("1").unwrap()).unwrap();
        let t = transform(&spec, &g, 0.5).unwrap();
        assert!((t.s_g(2.0) - 1.5).abs() < 1e-13);
        assert!(!transience_report(&t, 0.0).unwrap().transient);
        assert!(matches!(q_hitting(&t, 1.0, 0.0), Err(Error::NotTransient)));
    }

    #[test]
    fn exponential_scale() {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let g = GridFunction::from_expr(uniform_grid(-2.0, 2.0, 9), spec.scale().clone(), &Expr::parse("exp(sqrt(2)*x)").unwrap())
            .unwrap();
        let t = transform(&spec, &g, 0.0).unwrap();
        let k = 2.0 * 2f64.sqrt();
        for x in [-3.0, -0.5, 0.7, 2.5] {
            assert!((t.s_g(x) - (1.0 - (-k * x).exp()) / k).abs() < 1e-11, "{x}");
        }
        assert!((t.s_g_limits().1 - 1.0 / k).abs() < 1e-9);
    }

    #[test]
    fn vanishing_g_is_rejected() {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let g = GridFunction::from_expr(uniform_grid(-1.0, 1.0, 5), spec.scale().clone(), &Expr::parse("x^2").unwrap()).unwrap();
        assert!(matches!(transform(&spec, &g, 0.5), Err(Error::VanishingG { .. })));
    }

    #[test]
    fn revuz_measure_reweighting() {
        let delta = 0.5;
        let (spec, g) = delta_psi(delta);
        let t = transform(&spec, &g, 1.0).unwrap();
        let mu = RadonMeasure::atom(spec.interval(), 1.0, 1.0 / delta).unwrap();
        let q = revuz_under_q(&t, &mu).unwrap();
        assert!((q.mass(0.0, 2.0).unwrap() - delta).abs() < 1e-14);
    }

    #[test]
    fn likelihood_ratio_values() {
        let (_, g) = delta_psi(0.5);
        assert_eq!(likelihood_ratio(&g, 1.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((likelihood_ratio(&g, 1.0, 2.0, 0.3).unwrap() - 1.5 * (-0.3f64).exp() / 0.5).abs() < 1e-15);
    }
}
