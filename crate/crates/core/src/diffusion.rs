//! Regular diffusions on an open interval given by a scale function and a
//! speed measure, with their Green and potential kernels.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{improper_integral_keyed, BoundaryIntegral, CutoffSchedule, Interval, RadonMeasure, Side, Verdict};
use crate::scale::ScaleFunction;

#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub name: String,
    interval: Interval,
    scale: ScaleFunction,
    speed: RadonMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransienceReport {
    pub transient: bool,
    /// `P^x(X_{ζ-} = r)`.
    pub to_right: f64,
    /// `P^x(X_{ζ-} = ℓ)`.
    pub to_left: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Finiteness {
    /// The functional explodes before the lifetime on every path.
    AlwaysInfinite,
    /// Finite on the event that the path converges to this endpoint.
    FiniteAtBoundary,
    /// The diffusion never converges to this endpoint (infinite scale).
    NotAttracting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinitenessReport {
    pub left: Finiteness,
    pub right: Finiteness,
}

impl DiffusionSpec {
    pub fn new(name: impl Into<String>, scale: ScaleFunction, speed: RadonMeasure) -> Result<DiffusionSpec> {
        let interval = scale.interval();
        if speed.interval() != interval {
            return Err(Error::InvalidInterval("scale and speed measure live on different intervals".into()));
        }
        let spec = DiffusionSpec { name: name.into(), interval, scale, speed };
        // regularity surrogate: m charges every sampled cell
        let pts = interval.sample_points(33);
        for w in pts.windows(2) {
            if spec.speed.mass(w[0], w[1])? <= 0.0 {
                return Err(Error::Config(format!(
                    "speed measure does not charge ({}, {}); the diffusion would not be regular",
                    w[0], w[1]
                )));
            }
        }
        Ok(spec)
    }

    /// Brownian motion on `interval` in the convention `s(x) = x`,
    /// `m(dx) = 2 dx`.
    pub fn brownian(interval: Interval) -> DiffusionSpec {
        DiffusionSpec {
            name: "bm".into(),
            interval,
            scale: ScaleFunction::natural(interval),
            speed: RadonMeasure::lebesgue(interval, 2.0).with_label("2 dy"),
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn scale(&self) -> &ScaleFunction {
        &self.scale
    }

    pub fn speed(&self) -> &RadonMeasure {
        &self.speed
    }

    pub fn s(&self, x: f64) -> f64 {
        self.scale.eval(x)
    }

    pub fn s_left(&self) -> f64 {
        self.scale.left_limit()
    }

    pub fn s_right(&self) -> f64 {
        self.scale.right_limit()
    }

    pub fn s_limit(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.s_left(),
            Side::Right => self.s_right(),
        }
    }

    fn finite_scale(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let (sa, sb) = (self.s(a), self.s(b));
        if !sa.is_finite() {
            return Err(Error::InfiniteScale(a));
        }
        if !sb.is_finite() {
            return Err(Error::InfiniteScale(b));
        }
        Ok((sa, sb))
    }

    fn check_order(&self, a: f64, x: f64, b: f64) -> Result<()> {
        if !(self.interval.left <= a && a <= x && x <= b && b <= self.interval.right && a < b) {
            return Err(Error::Precondition(format!("need ℓ ≤ a ≤ x ≤ b ≤ r with a < b, got a={a}, x={x}, b={b}")));
        }
        Ok(())
    }

    /// `P^x(T_b < T_a) = (s(x)-s(a))/(s(b)-s(a))`.
    pub fn hitting_prob(&self, x: f64, a: f64, b: f64) -> Result<f64> {
        self.check_order(a, x, b)?;
        let (sa, sb) = self.finite_scale(a, b)?;
        Ok(((self.s(x) - sa) / (sb - sa)).clamp(0.0, 1.0))
    }

    /// Green kernel of the diffusion killed on leaving `(a, b)`; equals the
    /// expected local time at `y` before exit, started at `x`.
    pub fn green_kernel(&self, a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
        if !(a < b) {
            return Err(Error::Precondition(format!("need a < b, got ({a}, {b})")));
        }
        let (sa, sb) = self.finite_scale(a, b)?;
        if x <= a || x >= b || y <= a || y >= b {
            return Ok(0.0);
        }
        let (lo, hi) = (x.min(y), x.max(y));
        Ok((self.s(lo) - sa) * (sb - self.s(hi)) / (sb - sa))
    }

    /// Potential density `u(x, y)` with respect to `m` (requires transience).
    pub fn potential_density(&self, x: f64, y: f64) -> Result<f64> {
        let (sl, sr) = (self.s_left(), self.s_right());
        let (lo, hi) = (x.min(y), x.max(y));
        match (sl.is_finite(), sr.is_finite()) {
            (false, false) => Err(Error::NotTransient),
            (true, true) => Ok((self.s(lo) - sl) * (sr - self.s(hi)) / (sr - sl)),
            (false, true) => Ok(sr - self.s(hi)),
            (true, false) => Ok(self.s(lo) - sl),
        }
    }

    pub fn is_transient(&self, x: f64) -> TransienceReport {
        let (sl, sr) = (self.s_left(), self.s_right());
        match (sl.is_finite(), sr.is_finite()) {
            (false, false) => TransienceReport { transient: false, to_right: 0.0, to_left: 0.0 },
            (true, true) => {
                let p = (self.s(x) - sl) / (sr - sl);
                TransienceReport { transient: true, to_right: p, to_left: 1.0 - p }
            }
            (false, true) => TransienceReport { transient: true, to_right: 1.0, to_left: 0.0 },
            (true, false) => TransienceReport { transient: true, to_right: 0.0, to_left: 1.0 },
        }
    }

    /// `E^x[∫_0^ζ f(X_t) dA_t] = ∫ u(x,y) f(y) μ_A(dy)`; `+∞` when the
    /// integral diverges.
    pub fn pcaf_potential(&self, mu: &RadonMeasure, f: &(dyn Fn(f64) -> f64 + Sync), x: f64) -> Result<f64> {
        if !self.is_transient(x).transient {
            return Err(Error::NotTransient);
        }
        let kernel = |y: f64| {
            let v = f(y);
            if v == 0.0 {
                0.0
            } else {
                self.potential_density(x, y).unwrap_or(f64::NAN) * v
            }
        };
        let sched = CutoffSchedule::default();
        let mut total = 0.0;
        for side in [Side::Left, Side::Right] {
            let v = crate::measure::improper_integral(mu, &kernel, side, x, &sched)?
                .decided(&format!("potential of the additive functional toward the {side} endpoint"))?;
            match v.kind {
                Verdict::Finite(t) => total += t,
                _ => return Ok(f64::INFINITY),
            }
        }
        Ok(total)
    }

    /// Per-endpoint finiteness of `A_ζ` on the event of convergence to that
    /// endpoint.
    pub fn pcaf_finiteness(&self, mu: &RadonMeasure) -> Result<FinitenessReport> {
        if !mu.has_mass() {
            return Err(Error::ZeroMeasure);
        }
        let (sl, sr) = (self.s_left(), self.s_right());
        if !sl.is_finite() && !sr.is_finite() {
            return Ok(FinitenessReport { left: Finiteness::AlwaysInfinite, right: Finiteness::AlwaysInfinite });
        }
        let c = self.interval.reference_point();
        let sched = CutoffSchedule::default();
        let side_report = |side: Side| -> Result<Finiteness> {
            let sb = self.s_limit(side);
            if !sb.is_finite() {
                return Ok(Finiteness::NotAttracting);
            }
            let scale = self.scale.clone();
            let f = move |y: f64| (scale.eval(y) - sb).abs();
            let v = improper_integral_keyed(mu, &f, side, c, &sched, BoundaryIntegral::Arrival)?
                .decided(&format!("finiteness of the additive functional at the {side} endpoint"))?;
            Ok(if v.is_finite() { Finiteness::FiniteAtBoundary } else { Finiteness::AlwaysInfinite })
        };
        Ok(FinitenessReport { left: side_report(Side::Left)?, right: side_report(Side::Right)? })
    }

    /// The same diffusion with another speed measure (used by transforms).
    pub fn with_scale_and_speed(name: impl Into<String>, scale: ScaleFunction, speed: RadonMeasure) -> DiffusionSpec {
        DiffusionSpec { name: name.into(), interval: scale.interval(), scale, speed }
    }

    /// Density of `m` with respect to Lebesgue measure, when it has one and
    /// no atoms.
    pub fn speed_density(&self) -> Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
        if !self.speed.atoms().is_empty() {
            return None;
        }
        let d = self.speed.density()?.func();
        let supp = self.speed.support();
        Some(Arc::new(move |y| match supp {
            Some((lo, hi)) if y < lo || y > hi => 0.0,
            _ => d(y),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm01() -> DiffusionSpec {
        DiffusionSpec::brownian(Interval::real_line())
    }

    #[test]
    fn hitting_probabilities_are_linear_in_scale() {
        let d = bm01();
        assert_eq!(d.hitting_prob(0.5, 0.0, 1.0).unwrap(), 0.5);
        assert_eq!(d.hitting_prob(0.25, 0.0, 1.0).unwrap(), 0.25);
        assert!(matches!(
            d.hitting_prob(0.0, f64::NEG_INFINITY, 1.0),
            Err(Error::InfiniteScale(_))
        ));
    }

    #[test]
    fn green_kernel_values_and_symmetry() {
        let d = bm01();
        assert_eq!(d.green_kernel(0.0, 1.0, 0.5, 0.5).unwrap(), 0.25);
        assert_eq!(d.green_kernel(0.0, 1.0, 0.25, 0.75).unwrap(), 0.0625);
        assert_eq!(d.green_kernel(0.0, 1.0, 0.75, 0.25).unwrap(), 0.0625);
    }

    #[test]
    fn half_line_potential_density() {
        let d = DiffusionSpec::brownian(Interval::new(0.0, f64::INFINITY).unwrap());
        assert_eq!(d.potential_density(1.0, 2.0).unwrap(), 1.0);
        assert!(matches!(bm01().potential_density(0.0, 1.0), Err(Error::NotTransient)));
        let r = d.is_transient(3.0);
        assert!(r.transient);
        assert_eq!(r.to_right, 0.0);
        assert!(!bm01().is_transient(0.0).transient);
    }

    #[test]
    fn pcaf_potential_cases() {
        let i = Interval::new(0.0, f64::INFINITY).unwrap();
        let d = DiffusionSpec::brownian(i);
        let atom = RadonMeasure::atom(i, 1.0, 1.0).unwrap();
        assert!((d.pcaf_potential(&atom, &|_| 1.0, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(d.pcaf_potential(&RadonMeasure::zero(i), &|_| 1.0, 2.0).unwrap(), 0.0);
        let unif = RadonMeasure::lebesgue(i, 1.0).with_support(0.0, 1.0).unwrap();
        // oracle: ∫_0^1 min(1, y) dy = 1/2
        assert!((d.pcaf_potential(&unif, &|_| 1.0, 1.0).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pcaf_finiteness_cases() {
        let i = Interval::new(0.0, f64::INFINITY).unwrap();
        let d = DiffusionSpec::brownian(i);
        let inv_sq = RadonMeasure::from_expr(i, "2/y^2").unwrap();
        assert_eq!(d.pcaf_finiteness(&inv_sq).unwrap().left, Finiteness::AlwaysInfinite);
        let unif = RadonMeasure::lebesgue(i, 1.0).with_support(0.0, 1.0).unwrap();
        let rep = d.pcaf_finiteness(&unif).unwrap();
        assert_eq!(rep.left, Finiteness::FiniteAtBoundary);
        assert_eq!(rep.right, Finiteness::NotAttracting);
        let bm = bm01();
        let leb = RadonMeasure::lebesgue(Interval::real_line(), 2.0);
        assert_eq!(bm.pcaf_finiteness(&leb).unwrap().left, Finiteness::AlwaysInfinite);
        assert!(matches!(
            bm.pcaf_finiteness(&RadonMeasure::zero(Interval::real_line())),
            Err(Error::ZeroMeasure)
        ));
    }
}
