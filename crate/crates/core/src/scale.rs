//! Scale functions: strictly increasing continuous maps with endpoint limits.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measure::{tail_verdict, CutoffSchedule, Density, Interval, RadonMeasure, Side, Verdict};

/// The concrete map behind a [`ScaleFunction`].
pub trait ScaleMap: Send + Sync + fmt::Debug {
    fn eval(&self, x: f64) -> f64;
    /// Derivative `s'(x)` when the map is absolutely continuous and the
    /// derivative is available; right derivative at kinks.
    fn derivative(&self, x: f64) -> Option<f64>;
    /// Analytic inverse, when known.
    fn inverse(&self, _y: f64) -> Option<f64> {
        None
    }
    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct ExprScale {
    pub expr: Expr,
    pub inverse: Option<Expr>,
}

impl ScaleMap for ExprScale {
    fn eval(&self, x: f64) -> f64 {
        self.expr.eval(x)
    }
    fn derivative(&self, x: f64) -> Option<f64> {
        Some(self.expr.derivative(x))
    }
    fn inverse(&self, y: f64) -> Option<f64> {
        self.inverse.as_ref().map(|e| e.eval(y))
    }
    fn describe(&self) -> String {
        self.expr.to_string()
    }
}

/// Monotone table with Fritsch–Carlson cubic interpolation and linear
/// extrapolation beyond the knots.
#[derive(Debug, Clone)]
pub struct TableScale {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl TableScale {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<TableScale> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Config("scale table needs at least two (x, s) rows".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || ys.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("scale table must be strictly increasing in both columns".into()));
        }
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ms = vec![0.0; n];
        ms[0] = d[0];
        ms[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            ms[i] = if d[i - 1] * d[i] <= 0.0 { 0.0 } else { 0.5 * (d[i - 1] + d[i]) };
        }
        for i in 0..n - 1 {
            let (a, b) = (ms[i] / d[i], ms[i + 1] / d[i]);
            let h = a.hypot(b);
            if h > 3.0 {
                let t = 3.0 / h;
                ms[i] = t * a * d[i];
                ms[i + 1] = t * b * d[i];
            }
        }
        Ok(TableScale { xs, ys, ms })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    fn cell(&self, x: f64) -> usize {
        self.xs.partition_point(|&p| p <= x).clamp(1, self.xs.len() - 1) - 1
    }
}

impl ScaleMap for TableScale {
    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.ms[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.ms[n - 1] * (x - self.xs[n - 1]);
        }
        let i = self.cell(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.ms[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.ms[i + 1]
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        let n = self.xs.len();
        if x < self.xs[0] {
            return Some(self.ms[0]);
        }
        if x >= self.xs[n - 1] {
            return Some(self.ms[n - 1]);
        }
        let i = self.cell(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        Some(
            ((6.0 * t2 - 6.0 * t) * self.ys[i]
                + (3.0 * t2 - 4.0 * t + 1.0) * h * self.ms[i]
                + (-6.0 * t2 + 6.0 * t) * self.ys[i + 1]
                + (3.0 * t2 - 2.0 * t) * h * self.ms[i + 1])
                / h,
        )
    }

    fn describe(&self) -> String {
        format!("table[{} knots]", self.xs.len())
    }
}

/// A scale map given by closures (used for derived scales).
pub struct FnScale {
    pub label: String,
    pub eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub inverse: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for FnScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnScale({})", self.label)
    }
}

impl ScaleMap for FnScale {
    fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
    fn derivative(&self, x: f64) -> Option<f64> {
        self.derivative.as_ref().map(|d| d(x))
    }
    fn inverse(&self, y: f64) -> Option<f64> {
        self.inverse.as_ref().map(|f| f(y))
    }
    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitOrigin {
    Declared,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndLimit {
    pub value: f64,
    pub origin: LimitOrigin,
}

#[derive(Clone)]
pub struct ScaleFunction {
    map: Arc<dyn ScaleMap>,
    interval: Interval,
    left: EndLimit,
    right: EndLimit,
}

impl fmt::Debug for ScaleFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ScaleFunction({}, s(l+)={}, s(r-)={})",
            self.map.describe(),
            self.left.value,
            self.right.value
        )
    }
}

impl ScaleFunction {
    /// Builds a scale function, estimating any limit not declared.
    pub fn new(
        map: Arc<dyn ScaleMap>,
        interval: Interval,
        left: Option<f64>,
        right: Option<f64>,
    ) -> Result<ScaleFunction> {
        let l = match left {
            Some(v) => EndLimit { value: v, origin: LimitOrigin::Declared },
            None => EndLimit { value: estimate_limit(map.as_ref(), interval, Side::Left)?, origin: LimitOrigin::Numeric },
        };
        let r = match right {
            Some(v) => EndLimit { value: v, origin: LimitOrigin::Declared },
            None => EndLimit { value: estimate_limit(map.as_ref(), interval, Side::Right)?, origin: LimitOrigin::Numeric },
        };
        if l.value == f64::INFINITY || r.value == f64::NEG_INFINITY || !(l.value < r.value) {
            return Err(Error::Config(format!("scale limits {} and {} are inconsistent", l.value, r.value)));
        }
        let s = ScaleFunction { map, interval, left: l, right: r };
        s.check_monotone()?;
        Ok(s)
    }

    /// `s(x) = x`.
    pub fn natural(interval: Interval) -> ScaleFunction {
        let map = ExprScale { expr: Expr::parse("x").unwrap(), inverse: Some(Expr::parse("x").unwrap()) };
        let lim = |v: f64| EndLimit { value: v, origin: LimitOrigin::Declared };
        ScaleFunction { map: Arc::new(map), interval, left: lim(interval.left), right: lim(interval.right) }
    }

    pub fn from_expr(
        interval: Interval,
        expr: &str,
        inverse: Option<&str>,
        left: Option<f64>,
        right: Option<f64>,
    ) -> Result<ScaleFunction> {
        let map = ExprScale { expr: Expr::parse(expr)?, inverse: inverse.map(Expr::parse).transpose()? };
        ScaleFunction::new(Arc::new(map), interval, left, right)
    }

    fn check_monotone(&self) -> Result<()> {
        let pts = self.interval.sample_points(257);
        let vals: Vec<f64> = pts.iter().map(|&x| self.eval(x)).collect();
        // saturation in floating point is tolerated, decrease is not
        if !(vals[0] < vals[vals.len() - 1]) {
            return Err(Error::Config("scale function is not increasing".into()));
        }
        for (i, w) in vals.windows(2).enumerate() {
            if w[0] > w[1] || w[0].is_nan() {
                return Err(Error::Config(format!(
                    "scale function is not strictly increasing between {} and {}",
                    pts[i],
                    pts[i + 1]
                )));
            }
        }
        Ok(())
    }

    pub fn map(&self) -> &Arc<dyn ScaleMap> {
        &self.map
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn describe(&self) -> String {
        self.map.describe()
    }

    /// `s(x)`, with the endpoint limits at the endpoints themselves.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.interval.left {
            return self.left.value;
        }
        if x >= self.interval.right {
            return self.right.value;
        }
        self.map.eval(x)
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        self.map.derivative(x)
    }

    pub fn limit(&self, side: Side) -> EndLimit {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn left_limit(&self) -> f64 {
        self.left.value
    }

    pub fn right_limit(&self) -> f64 {
        self.right.value
    }

    /// `s⁻¹(y)`; analytic when available, otherwise bisection.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= self.left.value {
            return self.interval.left;
        }
        if y >= self.right.value {
            return self.interval.right;
        }
        if let Some(x) = self.map.inverse(y) {
            return x;
        }
        let c = self.interval.reference_point();
        let (mut lo, mut hi) = (c, c);
        let mut step = 1.0;
        while self.eval(lo) > y {
            lo = if self.interval.left.is_finite() { 0.5 * (lo + self.interval.left) } else { lo - step };
            step *= 2.0;
        }
        step = 1.0;
        while self.eval(hi) < y {
            hi = if self.interval.right.is_finite() { 0.5 * (hi + self.interval.right) } else { hi + step };
            step *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// The Lebesgue–Stieltjes measure `s(dy)`.
    pub fn measure(&self) -> Result<RadonMeasure> {
        if self.map.derivative(self.interval.reference_point()).is_none() {
            return Err(Error::Unsupported("scale function has no derivative to build s(dy)".into()));
        }
        let map = self.map.clone();
        Ok(RadonMeasure::with_density(
            self.interval,
            Density::from_fn(format!("s'[{}]", self.map.describe()), Arc::new(move |y| map.derivative(y).unwrap_or(0.0))),
        )
        .with_label("s(dy)"))
    }
}

/// Estimates `s(ℓ+)` or `s(r−)` by following `s` along cutoffs toward the
/// endpoint; increments that do not contract mean an infinite limit.
fn estimate_limit(map: &dyn ScaleMap, interval: Interval, side: Side) -> Result<f64> {
    let b = interval.reference_point();
    let endpoint = interval.endpoint(side);
    let schedule = CutoffSchedule { tol: crate::quadrature::Tolerance { abs: 1e-13, rel: 1e-13 }, ..Default::default() };
    let v = tail_verdict(endpoint, b, side, &schedule, None, |lo, hi| {
        let d = map.eval(hi) - map.eval(lo);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::NonFinite { at: if side == Side::Left { lo } else { hi }, context: "scale limit".into() })
        }
    })?;
    let sign = match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
    };
    match v.kind {
        Verdict::Finite(total) => Ok(map.eval(b) + sign * total),
        Verdict::Divergent => Ok(sign * f64::INFINITY),
        Verdict::Inconclusive => Err(Error::Inconclusive {
            what: format!("limit of the scale function at the {side} endpoint"),
            diagnostics: v.diagnostics,
        }),
    }
}
