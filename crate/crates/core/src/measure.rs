//! Radon measures on an open interval: an optional density plus finitely
//! many atoms, with integration over half-open cells `(a, b]` and verdicts
//! for improper integrals toward an endpoint.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Diagnostics, Error, Result};
use crate::expr::Expr;
use crate::quadrature::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Open interval `(left, right)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Result<Interval> {
        if left.is_nan() || right.is_nan() || left >= right || left == f64::INFINITY || right == f64::NEG_INFINITY {
            return Err(Error::InvalidInterval(format!("({left}, {right}) is not an open interval")));
        }
        Ok(Interval { left, right })
    }

    pub fn real_line() -> Interval {
        Interval { left: f64::NEG_INFINITY, right: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.left && x < self.right
    }

    pub fn endpoint(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// A point well inside the interval, used when no grid is available.
    pub fn reference_point(&self) -> f64 {
        match (self.left.is_finite(), self.right.is_finite()) {
            (true, true) => 0.5 * (self.left + self.right),
            (true, false) => self.left + 1.0,
            (false, true) => self.right - 1.0,
            (false, false) => 0.0,
        }
    }

    /// `n` strictly interior sample points spread over the interval
    /// (geometrically toward infinite ends).
    pub fn sample_points(&self, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|i| {
                let t = i as f64 / (n + 1) as f64;
                match (self.left.is_finite(), self.right.is_finite()) {
                    (true, true) => self.left + t * (self.right - self.left),
                    (true, false) => self.left + t / (1.0 - t),
                    (false, true) => self.right - (1.0 - t) / t,
                    (false, false) => (std::f64::consts::PI * (t - 0.5)).tan(),
                }
            })
            .collect()
    }
}

/// Where a density came from; kept for reporting and config round trips.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    Expr(Expr),
    Table { xs: Vec<f64>, ys: Vec<f64> },
    Derived(String),
}

impl fmt::Display for DensitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensitySource::Expr(e) => write!(f, "{e}"),
            DensitySource::Table { xs, .. } => write!(f, "table[{} points]", xs.len()),
            DensitySource::Derived(s) => f.write_str(s),
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Density {
    pub source: DensitySource,
    func: ScalarFn,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Density({})", self.source)
    }
}

impl Density {
    pub fn from_expr(e: Expr) -> Density {
        let e2 = e.clone();
        Density { source: DensitySource::Expr(e), func: Arc::new(move |y| e2.eval(y)) }
    }

    /// Piecewise-linear table, zero outside the tabulated range.
    pub fn from_table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Density> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::Config("density table needs at least two (x, value) rows".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("density table abscissae must be strictly increasing".into()));
        }
        if ys.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("density table values must be finite and nonnegative".into()));
        }
        let (tx, ty) = (xs.clone(), ys.clone());
        let func = Arc::new(move |y: f64| {
            if y < tx[0] || y > tx[tx.len() - 1] {
                return 0.0;
            }
            let i = tx.partition_point(|&p| p <= y).clamp(1, tx.len() - 1);
            let t = (y - tx[i - 1]) / (tx[i] - tx[i - 1]);
            ty[i - 1] + t * (ty[i] - ty[i - 1])
        });
        Ok(Density { source: DensitySource::Table { xs, ys }, func })
    }

    pub fn from_fn(label: impl Into<String>, f: ScalarFn) -> Density {
        Density { source: DensitySource::Derived(label.into()), func: f }
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.func)(y)
    }

    pub fn func(&self) -> ScalarFn {
        self.func.clone()
    }
}

/// The two diagnostic integrals used for boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryIntegral {
    /// `∫ μ((z,b)) s(dz)` toward the endpoint; finiteness means the
    /// functional stays finite on arrival at the boundary.
    Arrival,
    /// `∫ |s(b)-s(z)| μ(dz)` toward the endpoint; finiteness means the
    /// functional stays finite when departing from the boundary.
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverrideVerdict {
    Finite,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictOverride {
    pub side: Side,
    pub integral: BoundaryIntegral,
    pub verdict: OverrideVerdict,
}

#[derive(Debug, Clone)]
pub struct RadonMeasure {
    interval: Interval,
    density: Option<Density>,
    support: Option<(f64, f64)>,
    atoms: Vec<(f64, f64)>,
    breakpoints: Vec<f64>,
    overrides: Vec<VerdictOverride>,
    label: String,
}

impl RadonMeasure {
    pub fn zero(interval: Interval) -> RadonMeasure {
        RadonMeasure {
            interval,
            density: None,
            support: None,
            atoms: Vec::new(),
            breakpoints: Vec::new(),
            overrides: Vec::new(),
            label: "0".into(),
        }
    }

    pub fn with_density(interval: Interval, density: Density) -> RadonMeasure {
        let label = density.source.to_string();
        let mut m = RadonMeasure::zero(interval);
        if let DensitySource::Table { xs, .. } = &density.source {
            m.breakpoints = xs.iter().copied().filter(|x| interval.contains(*x)).collect();
        }
        m.density = Some(density);
        m.label = format!("{label} dy");
        m
    }

    pub fn from_expr(interval: Interval, density: &str) -> Result<RadonMeasure> {
        Ok(RadonMeasure::with_density(interval, Density::from_expr(Expr::parse(density)?)))
    }

    /// Constant multiple of Lebesgue measure.
    pub fn lebesgue(interval: Interval, factor: f64) -> RadonMeasure {
        let mut m = RadonMeasure::with_density(
            interval,
            Density::from_fn(format!("{factor}"), Arc::new(move |_| factor)),
        );
        m.label = format!("{factor} dy");
        m
    }

    pub fn atom(interval: Interval, location: f64, mass: f64) -> Result<RadonMeasure> {
        RadonMeasure::zero(interval).with_atom(location, mass)
    }

    pub fn with_atom(mut self, location: f64, mass: f64) -> Result<RadonMeasure> {
        if !self.interval.contains(location) {
            return Err(Error::Config(format!("atom at {location} is not inside the state interval")));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Config(format!("atom mass {mass} must be positive and finite")));
        }
        self.atoms.push((location, mass));
        self.atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.refresh_label();
        Ok(self)
    }

    /// Restricts the density part to `[lo, hi]`.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Result<RadonMeasure> {
        if !(lo < hi) {
            return Err(Error::Config(format!("support [{lo}, {hi}] is empty")));
        }
        self.support = Some((lo, hi));
        for p in [lo, hi] {
            if self.interval.contains(p) {
                self.breakpoints.push(p);
            }
        }
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
        Ok(self)
    }

    pub fn with_breakpoints(mut self, pts: &[f64]) -> RadonMeasure {
        self.breakpoints.extend(pts.iter().copied().filter(|p| self.interval.contains(*p)));
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
        self
    }

    pub fn with_override(mut self, o: VerdictOverride) -> RadonMeasure {
        self.overrides.retain(|x| !(x.side == o.side && x.integral == o.integral));
        self.overrides.push(o);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> RadonMeasure {
        self.label = label.into();
        self
    }

    fn refresh_label(&mut self) {
        let mut parts = Vec::new();
        if let Some(d) = &self.density {
            parts.push(format!("{} dy", d.source));
        }
        for (x, w) in &self.atoms {
            parts.push(format!("{w}·δ_{x}"));
        }
        self.label = if parts.is_empty() { "0".into() } else { parts.join(" + ") };
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn overrides(&self) -> &[VerdictOverride] {
        &self.overrides
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn override_for(&self, side: Side, integral: BoundaryIntegral) -> Option<OverrideVerdict> {
        self.overrides.iter().find(|o| o.side == side && o.integral == integral).map(|o| o.verdict)
    }

    /// Density value at `y` (zero outside the support or without density).
    pub fn density_at(&self, y: f64) -> f64 {
        match &self.density {
            None => 0.0,
            Some(d) => {
                if let Some((lo, hi)) = self.support {
                    if y < lo || y > hi {
                        return 0.0;
                    }
                }
                d.eval(y)
            }
        }
    }

    pub fn has_density(&self) -> bool {
        self.density.is_some()
    }

    /// Whether the measure charges the interval at all.
    pub fn has_mass(&self) -> bool {
        if !self.atoms.is_empty() {
            return true;
        }
        if self.density.is_none() {
            return false;
        }
        let probe = match self.support {
            Some((lo, hi)) => {
                let lo = lo.max(self.interval.left);
                let hi = hi.min(self.interval.right);
                if lo >= hi {
                    return false;
                }
                Interval { left: lo, right: hi }.sample_points(4001)
            }
            None => self.interval.sample_points(4001),
        };
        probe.iter().any(|&y| self.density_at(y) > 0.0)
    }

    /// Farthest point toward `side` known to carry mass (atoms and support
    /// edges); used so improper integrals do not stop before reaching it.
    pub fn extent(&self, side: Side) -> Option<f64> {
        let atom = match side {
            Side::Left => self.atoms.first().map(|a| a.0),
            Side::Right => self.atoms.last().map(|a| a.0),
        };
        let supp = self.support.map(|(lo, hi)| match side {
            Side::Left => lo.max(self.interval.left),
            Side::Right => hi.min(self.interval.right),
        });
        match (atom, supp.filter(|p| self.interval.contains(*p))) {
            (Some(a), Some(b)) => Some(match side {
                Side::Left => a.min(b),
                Side::Right => a.max(b),
            }),
            (a, b) => a.or(b),
        }
    }

    /// `∫_{(a,b]} f dμ`: quadrature on the density split at breakpoints,
    /// plus atoms in `(a, b]`.
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        self.integrate_tol(f, a, b, Tolerance::default())
    }

    pub fn integrate_tol(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
        if !(a < b) {
            return Err(Error::InvalidInterval(format!("integration range ({a}, {b}] is empty")));
        }
        let a = a.max(self.interval.left);
        let b = b.min(self.interval.right);
        if a >= b {
            return Ok(0.0);
        }
        let mut total = 0.0;
        if self.density.is_some() {
            let (mut lo, mut hi) = (a, b);
            if let Some((s0, s1)) = self.support {
                lo = lo.max(s0);
                hi = hi.min(s1);
            }
            if lo < hi {
                let mut cuts = vec![lo];
                cuts.extend(self.breakpoints.iter().copied().filter(|p| *p > lo && *p < hi));
                cuts.push(hi);
                let negative = std::sync::atomic::AtomicBool::new(false);
                let g = |y: f64| {
                    let d = self.density_at(y);
                    if d < 0.0 {
                        negative.store(true, std::sync::atomic::Ordering::Relaxed);
                    }
                    if d == 0.0 {
                        0.0
                    } else {
                        f(y) * d
                    }
                };
                for w in cuts.windows(2) {
                    total += quadrature::integrate(&g, w[0], w[1], tol)?;
                }
                if negative.load(std::sync::atomic::Ordering::Relaxed) {
                    return Err(Error::Config(format!("density of '{}' is negative inside ({a}, {b}]", self.label)));
                }
            }
        }
        for &(x, w) in &self.atoms {
            if x > a && x <= b {
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::NonFinite { at: x, context: "integrand at an atom".into() });
                }
                total += v * w;
            }
        }
        Ok(total)
    }

    /// `μ((a, b])`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        self.integrate(&|_| 1.0, a, b)
    }

    /// Sum of two measures on the same interval.
    pub fn add(&self, other: &RadonMeasure) -> Result<RadonMeasure> {
        if self.interval != other.interval {
            return Err(Error::InvalidInterval("measures live on different intervals".into()));
        }
        let mut out = RadonMeasure::zero(self.interval);
        out.density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(_), None) => Some(self.restricted_density()),
            (None, Some(_)) => Some(other.restricted_density()),
            (Some(_), Some(_)) => {
                let (f1, f2) = (self.restricted_density().func(), other.restricted_density().func());
                Some(Density::from_fn(
                    format!("({}) + ({})", self.label, other.label),
                    Arc::new(move |y| f1(y) + f2(y)),
                ))
            }
        };
        out.breakpoints = self.breakpoints.iter().chain(&other.breakpoints).copied().collect();
        out.breakpoints.sort_by(f64::total_cmp);
        out.breakpoints.dedup();
        out.atoms = self.atoms.clone();
        for &(x, w) in &other.atoms {
            match out.atoms.iter_mut().find(|a| a.0 == x) {
                Some(a) => a.1 += w,
                None => out.atoms.push((x, w)),
            }
        }
        out.atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.refresh_label();
        Ok(out)
    }

    fn restricted_density(&self) -> Density {
        let d = self.density.clone().expect("density present");
        match self.support {
            None => d,
            Some((lo, hi)) => {
                let f = d.func();
                Density::from_fn(
                    format!("{}·1[{lo},{hi}]", d.source),
                    Arc::new(move |y| if y < lo || y > hi { 0.0 } else { f(y) }),
                )
            }
        }
    }

    /// The measure `w(y) μ(dy)`: density multiplied pointwise, atom masses
    /// multiplied by `w` at their locations.
    pub fn reweighted(&self, w: ScalarFn, label: &str) -> Result<RadonMeasure> {
        let mut out = self.clone();
        out.overrides.clear();
        if let Some(d) = &self.density {
            let f = d.func();
            let w2 = w.clone();
            out.density = Some(Density::from_fn(
                format!("{label}·({})", d.source),
                Arc::new(move |y| {
                    let v = f(y);
                    if v == 0.0 {
                        0.0
                    } else {
                        w2(y) * v
                    }
                }),
            ));
        }
        out.atoms.clear();
        for &(x, m) in &self.atoms {
            let k = w(x) * m;
            if !k.is_finite() || k < 0.0 {
                return Err(Error::NonFinite { at: x, context: format!("reweighting atom by {label}") });
            }
            if k > 0.0 {
                out.atoms.push((x, k));
            }
        }
        out.label = format!("{label}·({})", self.label);
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> Result<RadonMeasure> {
        self.reweighted(Arc::new(move |_| c), &format!("{c}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Finite(f64),
    Divergent,
    Inconclusive,
}

impl Verdict {
    pub fn is_finite(&self) -> bool {
        matches!(self, Verdict::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Verdict::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Finite(v) => write!(f, "Finite({v:.10e})"),
            Verdict::Divergent => f.write_str("Divergent"),
            Verdict::Inconclusive => f.write_str("Inconclusive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictOrigin {
    Numeric,
    Override,
    /// Decided without quadrature from a structural fact (e.g. infinite
    /// scale limit).
    Structural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralVerdict {
    pub kind: Verdict,
    pub diagnostics: Diagnostics,
    pub origin: VerdictOrigin,
}

impl IntegralVerdict {
    pub fn structural(kind: Verdict, note: &str) -> IntegralVerdict {
        IntegralVerdict {
            kind,
            diagnostics: Diagnostics { note: note.into(), ..Default::default() },
            origin: VerdictOrigin::Structural,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kind.is_finite()
    }

    /// Fails with `Inconclusive` (carrying the diagnostics) unless a verdict
    /// was reached.
    pub fn decided(self, what: &str) -> Result<IntegralVerdict> {
        if self.kind == Verdict::Inconclusive {
            return Err(Error::Inconclusive { what: what.into(), diagnostics: self.diagnostics });
        }
        Ok(self)
    }
}

/// Controls the nested truncations used to decide an improper integral.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffSchedule {
    /// Explicit cutoffs (strictly monotone toward the endpoint); when
    /// absent the distance to a finite endpoint halves and the distance
    /// toward an infinite one doubles at each step.
    pub cutoffs: Option<Vec<f64>>,
    pub max_steps: usize,
    pub min_steps: usize,
    pub divergence_threshold: f64,
    /// Successive increments with ratio at least this value for
    /// `growth_run` consecutive steps are read as divergence.
    pub growth_ratio: f64,
    pub growth_run: usize,
    pub tol: Tolerance,
}

impl Default for CutoffSchedule {
    fn default() -> Self {
        CutoffSchedule {
            cutoffs: None,
            max_steps: 200,
            min_steps: 8,
            divergence_threshold: 1e12,
            growth_ratio: 0.9,
            growth_run: 10,
            tol: Tolerance { abs: 1e-12, rel: 1e-10 },
        }
    }
}

impl CutoffSchedule {
    fn cutoff(&self, endpoint: f64, b: f64, side: Side, k: usize) -> Option<f64> {
        if let Some(c) = &self.cutoffs {
            return c.get(k - 1).copied();
        }
        let dir = match side {
            Side::Left => -1.0,
            Side::Right => 1.0,
        };
        Some(if endpoint.is_finite() {
            endpoint + (b - endpoint) * 0.5f64.powi(k as i32)
        } else {
            b + dir * 2f64.powi(k as i32 - 1)
        })
    }
}

/// Drives a sequence of nonnegative increments `piece(lo, hi)` over nested
/// truncations from `b` toward `endpoint` and turns them into a verdict.
pub fn tail_verdict(
    endpoint: f64,
    b: f64,
    side: Side,
    schedule: &CutoffSchedule,
    must_reach: Option<f64>,
    mut piece: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<IntegralVerdict> {
    let mut diag = Diagnostics::default();
    let mut sum = 0.0;
    let mut prev_cut = b;
    let mut prev_piece: Option<f64> = None;
    let mut growth = 0usize;
    let mut small = 0usize;
    let mut ratios: Vec<f64> = Vec::new();
    let numeric = |kind, diag| Ok(IntegralVerdict { kind, diagnostics: diag, origin: VerdictOrigin::Numeric });
    for k in 1..=schedule.max_steps {
        let Some(cut) = schedule.cutoff(endpoint, b, side, k) else { break };
        let moved = match side {
            Side::Left => cut < prev_cut && cut > endpoint,
            Side::Right => cut > prev_cut && cut < endpoint,
        };
        if !moved {
            diag.note = "cutoffs stopped approaching the endpoint".into();
            break;
        }
        let (lo, hi) = match side {
            Side::Left => (cut, prev_cut),
            Side::Right => (prev_cut, cut),
        };
        let p = match piece(lo, hi) {
            Ok(v) => v.abs(),
            Err(Error::NonFinite { at, .. }) => {
                diag.note = format!("integrand not finite near {at}");
                diag.cutoffs.push(cut);
                diag.partial_sums.push(f64::INFINITY);
                return numeric(Verdict::Divergent, diag);
            }
            Err(e) => return Err(e),
        };
        sum += p;
        diag.cutoffs.push(cut);
        diag.partial_sums.push(sum);
        prev_cut = cut;
        if !sum.is_finite() || sum > schedule.divergence_threshold {
            diag.note = format!("partial integral exceeded {:e}", schedule.divergence_threshold);
            return numeric(Verdict::Divergent, diag);
        }
        let ratio = match prev_piece {
            Some(q) if q > 0.0 => Some(p / q),
            _ => None,
        };
        if let Some(r) = ratio {
            ratios.push(r);
        }
        let significant = p > schedule.tol.abs;
        match ratio {
            Some(r) if r >= schedule.growth_ratio && significant => growth += 1,
            _ => growth = 0,
        }
        if growth >= schedule.growth_run {
            diag.note = format!(
                "increments kept a ratio of at least {} for {} steps",
                schedule.growth_ratio, schedule.growth_run
            );
            return numeric(Verdict::Divergent, diag);
        }
        prev_piece = Some(p);
        let reached = match (must_reach, side) {
            (None, _) => true,
            (Some(x), Side::Left) => cut < x,
            (Some(x), Side::Right) => cut > x,
        };
        let tol = schedule.tol.abs + schedule.tol.rel * sum;
        if p <= tol {
            small += 1;
        } else {
            small = 0;
        }
        if k >= schedule.min_steps && reached {
            if small >= 3 {
                return numeric(Verdict::Finite(sum), diag);
            }
            // geometric tail estimate once the increments contract steadily
            if ratios.len() >= 3 {
                let rmax = ratios[ratios.len() - 3..].iter().cloned().fold(0.0, f64::max);
                if rmax < schedule.growth_ratio {
                    let tail = p * rmax / (1.0 - rmax);
                    if tail <= tol {
                        return numeric(Verdict::Finite(sum + tail), diag);
                    }
                }
            }
        }
    }
    if diag.note.is_empty() {
        diag.note = "no verdict within the cutoff schedule".into();
    }
    numeric(Verdict::Inconclusive, diag)
}

/// Decides `∫ f dμ` over `(endpoint, b]` (left) or `(b, endpoint)` (right).
pub fn improper_integral(
    mu: &RadonMeasure,
    f: &dyn Fn(f64) -> f64,
    side: Side,
    b: f64,
    schedule: &CutoffSchedule,
) -> Result<IntegralVerdict> {
    let endpoint = mu.interval().endpoint(side);
    if !mu.interval().contains(b) {
        return Err(Error::InvalidInterval(format!("reference point {b} is not inside the interval")));
    }
    let tol = Tolerance { abs: schedule.tol.abs * 1e-2, rel: 1e-11 };
    tail_verdict(endpoint, b, side, schedule, mu.extent(side), |lo, hi| mu.integrate_tol(f, lo, hi, tol))
}

/// As [`improper_integral`] but honouring an analytic override recorded on
/// the measure for this side and integral.
pub fn improper_integral_keyed(
    mu: &RadonMeasure,
    f: &dyn Fn(f64) -> f64,
    side: Side,
    b: f64,
    schedule: &CutoffSchedule,
    key: BoundaryIntegral,
) -> Result<IntegralVerdict> {
    if let Some(o) = mu.override_for(side, key) {
        let kind = match o {
            OverrideVerdict::Divergent => Verdict::Divergent,
            OverrideVerdict::Finite => match improper_integral(mu, f, side, b, schedule)?.kind {
                Verdict::Finite(v) => Verdict::Finite(v),
                _ => Verdict::Finite(f64::NAN),
            },
        };
        return Ok(IntegralVerdict {
            kind,
            diagnostics: Diagnostics { note: "analytic override".into(), ..Default::default() },
            origin: VerdictOrigin::Override,
        });
    }
    improper_integral(mu, f, side, b, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_line() -> Interval {
        Interval::new(0.0, f64::INFINITY).unwrap()
    }

    #[test]
    fn lebesgue_unit_interval() {
        let m = RadonMeasure::lebesgue(Interval::real_line(), 1.0);
        assert!((m.integrate(&|_| 1.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_atom_against_hinge() {
        let m = RadonMeasure::atom(Interval::real_line(), 1.0, 2.0).unwrap();
        let v = m.integrate(&|y| (2.0 - y).max(0.0), 0.0, 3.0).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn inverse_square_density() {
        let m = RadonMeasure::from_expr(half_line(), "2/y^2").unwrap();
        // oracle: antiderivative -2/y
        let oracle = (-2.0 / 2.0) - (-2.0 / 1.0);
        assert!((m.integrate(&|_| 1.0, 1.0, 2.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn half_open_atom_convention() {
        let m = RadonMeasure::atom(Interval::real_line(), 1.0, 1.0).unwrap();
        assert_eq!(m.mass(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(m.mass(1.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_range_is_rejected() {
        let m = RadonMeasure::lebesgue(Interval::real_line(), 1.0);
        assert!(matches!(m.integrate(&|_| 1.0, 1.0, 1.0), Err(Error::InvalidInterval(_))));
    }

    #[test]
    fn atoms_must_be_interior_and_positive() {
        assert!(RadonMeasure::atom(half_line(), 0.0, 1.0).is_err());
        assert!(RadonMeasure::atom(half_line(), 1.0, 0.0).is_err());
        assert!(RadonMeasure::atom(half_line(), 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn table_density_and_support() {
        let d = Density::from_table(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]).unwrap();
        let m = RadonMeasure::with_density(Interval::real_line(), d);
        assert!((m.mass(-5.0, 5.0).unwrap() - 2.0).abs() < 1e-13);
        let m = RadonMeasure::lebesgue(Interval::real_line(), 1.0).with_support(0.0, 0.5).unwrap();
        assert!((m.mass(-1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sum_and_reweight() {
        let i = Interval::real_line();
        let a = RadonMeasure::lebesgue(i, 2.0);
        let b = RadonMeasure::atom(i, 0.5, 3.0).unwrap();
        let s = a.add(&b).unwrap();
        assert!((s.mass(0.0, 1.0).unwrap() - 5.0).abs() < 1e-13);
        let w = s.reweighted(Arc::new(|y| y * y), "y^2").unwrap();
        assert!((w.mass(0.0, 1.0).unwrap() - (2.0 / 3.0 + 0.75)).abs() < 1e-13);
    }

    #[test]
    fn zero_measure_has_no_mass() {
        assert!(!RadonMeasure::zero(Interval::real_line()).has_mass());
        assert!(RadonMeasure::lebesgue(Interval::real_line(), 1.0).has_mass());
    }

    #[test]
    fn improper_lebesgue_linear_diverges() {
        let m = RadonMeasure::lebesgue(Interval::real_line(), 1.0);
        let v = improper_integral(&m, &|y| 0.0 - y, Side::Left, 0.0, &CutoffSchedule::default()).unwrap();
        assert_eq!(v.kind, Verdict::Divergent);
    }

    #[test]
    fn improper_logistic_density_converges() {
        let m = RadonMeasure::from_expr(Interval::real_line(), "1/(1+exp(-y))").unwrap();
        let v = improper_integral(&m, &|y| 0.0 - y, Side::Left, 0.0, &CutoffSchedule::default()).unwrap();
        // oracle: ∫_{-∞}^0 (-z)/(1+e^{-z}) dz = π²/12 (dilogarithm identity)
        let Verdict::Finite(x) = v.kind else { panic!("{v:?}") };
        assert!((x - std::f64::consts::PI.powi(2) / 12.0).abs() < 1e-8, "{x}");
    }

    #[test]
    fn improper_log_divergence_at_zero() {
        let m = RadonMeasure::from_expr(half_line(), "2/y^2").unwrap();
        let v = improper_integral(&m, &|y| y - 0.0, Side::Left, 1.0, &CutoffSchedule::default()).unwrap();
        assert_eq!(v.kind, Verdict::Divergent);
    }

    #[test]
    fn improper_inverse_square_tail_is_finite() {
        let m = RadonMeasure::from_expr(half_line(), "2/y^2").unwrap();
        let v = improper_integral(&m, &|_| 1.0, Side::Right, 1.0, &CutoffSchedule::default()).unwrap();
        let Verdict::Finite(x) = v.kind else { panic!("{v:?}") };
        assert!((x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn override_short_circuits() {
        let m = RadonMeasure::lebesgue(Interval::real_line(), 1.0).with_override(VerdictOverride {
            side: Side::Left,
            integral: BoundaryIntegral::Departure,
            verdict: OverrideVerdict::Divergent,
        });
        let v = improper_integral_keyed(
            &m,
            &|_| 1.0,
            Side::Left,
            0.0,
            &CutoffSchedule::default(),
            BoundaryIntegral::Departure,
        )
        .unwrap();
        assert_eq!(v.kind, Verdict::Divergent);
        assert_eq!(v.origin, VerdictOrigin::Override);
    }
}
