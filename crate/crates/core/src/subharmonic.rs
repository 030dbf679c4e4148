//! Nonnegative subharmonic (convex in `s`) functions: validation,
//! one-sided `s`-derivatives, Choquet decomposition and reconstruction.

use std::sync::Arc;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::measure::{Density, RadonMeasure, Side};
use crate::quadrature::Tolerance;
use crate::scale::ScaleFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Negativity,
    Convexity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub at: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubharmonicCheck {
    pub ok: bool,
    pub violation: Option<Violation>,
}

/// Nonnegativity and nondecreasing `s`-difference quotients on the grid,
/// each within `tol` (relative to the size of the values and slopes).
pub fn check_subharmonic(g: &GridFunction, spec: &DiffusionSpec, tol: f64) -> SubharmonicCheck {
    let _ = spec;
    let vals = g.values();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for (x, v) in g.grid().iter().zip(vals) {
        if *v < -tol * scale {
            return SubharmonicCheck {
                ok: false,
                violation: Some(Violation { kind: ViolationKind::Negativity, at: *x, amount: -v }),
            };
        }
    }
    let s = g.s_grid();
    let chords: Vec<f64> = (0..vals.len() - 1).map(|i| (vals[i + 1] - vals[i]) / (s[i + 1] - s[i])).collect();
    for i in 1..chords.len() {
        let drop = chords[i - 1] - chords[i];
        if drop > tol * (1.0 + chords[i - 1].abs().max(chords[i].abs())) {
            return SubharmonicCheck {
                ok: false,
                violation: Some(Violation { kind: ViolationKind::Convexity, at: g.grid()[i], amount: drop }),
            };
        }
    }
    SubharmonicCheck { ok: true, violation: None }
}

fn richardson_one_sided(f: &dyn Fn(f64) -> f64, scale: &ScaleFunction, x: f64, side: Side, h0: f64) -> f64 {
    let dir = if side == Side::Right { 1.0 } else { -1.0 };
    let (fx, sx) = (f(x), scale.eval(x));
    const K: usize = 5;
    let mut t = [[0.0f64; K]; K];
    for k in 0..K {
        let h = h0 / (1u32 << k) as f64;
        let y = x + dir * h;
        t[k][0] = (f(y) - fx) / (scale.eval(y) - sx);
        for j in 1..=k {
            let p = (1u32 << j) as f64;
            t[k][j] = (p * t[k][j - 1] - t[k - 1][j - 1]) / (p - 1.0);
        }
    }
    t[K - 1][K - 1]
}

/// One-sided derivative of `g` with respect to `s` at `x`.
pub fn s_derivative(g: &GridFunction, x: f64, side: Side) -> Result<f64> {
    let scale = g.scale();
    let iv = scale.interval();
    let at_left = x <= iv.left;
    let at_right = x >= iv.right;
    if at_left || at_right {
        let lim = if at_left { scale.left_limit() } else { scale.right_limit() };
        if !lim.is_finite() {
            return Err(Error::Unsupported(format!("s-derivative at {x}: the scale limit there is infinite")));
        }
        if (at_left && side == Side::Left) || (at_right && side == Side::Right) {
            return Err(Error::Precondition(format!("no {side} derivative at the endpoint {x}")));
        }
    }
    if let (Some(i), Some(sl)) = (g.node_index(x), g.slopes()) {
        return Ok(if side == Side::Left { sl[i].0 } else { sl[i].1 });
    }
    if let Some(cf) = g.closed_form() {
        let room = match side {
            Side::Right => iv.right - x,
            Side::Left => x - iv.left,
        };
        let h0 = (1e-3 * x.abs().max(1.0)).min(0.25 * room);
        let f = cf.f.clone();
        return Ok(richardson_one_sided(&*f, scale, x, side, h0));
    }
    Ok(grid_derivative(g, x, side))
}

fn grid_derivative(g: &GridFunction, x: f64, side: Side) -> f64 {
    let (xs, s, v) = (g.grid(), g.s_grid(), g.values());
    let n = xs.len();
    let chord = |i: usize| (v[i + 1] - v[i]) / (s[i + 1] - s[i]);
    if let Some(i) = g.node_index(x) {
        // second-order one-sided difference through three nodes
        let three = |a: usize, b: usize, c: usize, at: usize| {
            let (sa, sb, sc) = (s[a], s[b], s[c]);
            let st = s[at];
            v[a] * ((st - sb) + (st - sc)) / ((sa - sb) * (sa - sc))
                + v[b] * ((st - sa) + (st - sc)) / ((sb - sa) * (sb - sc))
                + v[c] * ((st - sa) + (st - sb)) / ((sc - sa) * (sc - sb))
        };
        return match side {
            Side::Right if i + 2 < n => three(i, i + 1, i + 2, i),
            Side::Right if i + 1 < n => chord(i),
            Side::Right => chord(n - 2),
            Side::Left if i >= 2 => three(i - 2, i - 1, i, i),
            Side::Left if i >= 1 => chord(i - 1),
            Side::Left => chord(0),
        };
    }
    let i = xs.partition_point(|&p| p <= x).clamp(1, n - 1) - 1;
    if let Some(sl) = g.slopes() {
        let h = s[i + 1] - s[i];
        let t = (g.scale().eval(x) - s[i]) / h;
        let (m0, m1) = (sl[i].1, sl[i + 1].0);
        let t2 = t * t;
        return ((6.0 * t2 - 6.0 * t) * v[i] + (3.0 * t2 - 4.0 * t + 1.0) * h * m0 + (-6.0 * t2 + 6.0 * t) * v[i + 1]
            + (3.0 * t2 - 2.0 * t) * h * m1)
            / h;
    }
    chord(i)
}

/// Mass of one grid cell of a decomposed measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMass {
    pub lo: f64,
    pub hi: f64,
    /// `true` for the measure charging the increasing part.
    pub increasing_side: bool,
    pub mass: f64,
    /// Centroid of the cell mass in the scale coordinate.
    pub centroid_s: f64,
    pub as_atom: bool,
}

#[derive(Debug, Clone)]
pub struct ChoquetDecomposition {
    pub alpha: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub mu1: RadonMeasure,
    pub mu2: RadonMeasure,
    pub cstar: f64,
    pub cells: Vec<CellMass>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions {
    /// A cell mass above this multiple of its neighbours' average is
    /// recorded as an atom.
    pub atom_factor: f64,
    /// Relative size of a derivative jump at a node below which the jump is
    /// read as estimation noise rather than a kink.
    pub kink_tol: f64,
    /// Tolerance handed to [`check_subharmonic`].
    pub check_tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { atom_factor: 10.0, kink_tol: 1e-7, check_tol: 1e-9 }
    }
}

/// Density `ρ(s(y)) s'(y)` with `ρ` affine in `s` on each cell.
struct CellDensity {
    lo: Vec<f64>,
    hi: Vec<f64>,
    smid: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    scale: ScaleFunction,
}

impl CellDensity {
    fn eval(&self, y: f64) -> f64 {
        let i = self.lo.partition_point(|&p| p < y);
        if i == 0 {
            return 0.0;
        }
        let i = i - 1;
        if y > self.hi[i] {
            return 0.0;
        }
        let sp = self.scale.derivative(y).unwrap_or(0.0);
        ((self.a[i] + self.b[i] * (self.scale.eval(y) - self.smid[i])) * sp).max(0.0)
    }
}

pub fn choquet_decompose(g: &GridFunction, spec: &DiffusionSpec) -> Result<ChoquetDecomposition> {
    choquet_decompose_with(g, spec, &DecomposeOptions::default())
}

pub fn choquet_decompose_with(
    g: &GridFunction,
    spec: &DiffusionSpec,
    opts: &DecomposeOptions,
) -> Result<ChoquetDecomposition> {
    let check = check_subharmonic(g, spec, opts.check_tol);
    if let Some(v) = check.violation {
        return Err(Error::NotSubharmonic(format!("{:?} violation of size {:.3e} at x = {}", v.kind, v.amount, v.at)));
    }
    let iv = spec.interval();
    let (xs, s, v) = (g.grid(), g.s_grid(), g.values());
    let n = xs.len();
    let chord: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / (s[i + 1] - s[i])).collect();

    // raw one-sided slopes at the nodes
    let mut dm = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for i in 0..n {
        let interior = iv.contains(xs[i]);
        if let Some(sl) = g.slopes() {
            dm[i] = sl[i].0;
            dp[i] = sl[i].1;
        } else if g.closed_form().is_some() && interior {
            dm[i] = s_derivative(g, xs[i], Side::Left)?;
            dp[i] = s_derivative(g, xs[i], Side::Right)?;
        } else if g.closed_form().is_some() {
            let d = if i == 0 { s_derivative(g, xs[i], Side::Right)? } else { s_derivative(g, xs[i], Side::Left)? };
            dm[i] = d;
            dp[i] = d;
        } else {
            // tabulated values: one slope per node, between the adjacent chords
            let d = if i == 0 {
                if n > 2 {
                    chord[0] - (chord[1] - chord[0]) * (s[1] - s[0]) / (s[2] - s[0])
                } else {
                    chord[0]
                }
            } else if i == n - 1 {
                if n > 2 {
                    chord[n - 2] + (chord[n - 2] - chord[n - 3]) * (s[n - 1] - s[n - 2]) / (s[n - 1] - s[n - 3])
                } else {
                    chord[n - 2]
                }
            } else {
                let (h0, h1) = (s[i] - s[i - 1], s[i + 1] - s[i]);
                (h1 * chord[i - 1] + h0 * chord[i]) / (h0 + h1)
            };
            dm[i] = d;
            dp[i] = d;
        }
    }
    // clamp into the chord brackets so every cell gets a valid mass
    for i in 0..n {
        let lo = if i > 0 { chord[i - 1] } else { f64::NEG_INFINITY };
        let hi = if i < n - 1 { chord[i] } else { f64::INFINITY };
        dm[i] = dm[i].clamp(lo, hi.max(lo));
        dp[i] = dp[i].clamp(dm[i], hi.max(dm[i]));
        let jump = dp[i] - dm[i];
        if jump <= opts.kink_tol * (1.0 + dm[i].abs().max(dp[i].abs())) {
            let mid = 0.5 * (dm[i] + dp[i]);
            dm[i] = mid;
            dp[i] = mid;
        }
    }
    let slope_size = dm.iter().chain(dp.iter()).fold(1.0f64, |a, d| a.max(d.abs()));
    let noise = 1e-10 * slope_size;
    // leftmost minimiser
    let mut k = 0;
    for i in 1..n {
        if v[i] < v[k] {
            k = i;
        }
    }
    dm[k] = dm[k].min(0.0);
    dp[k] = dp[k].max(0.0);

    let scale = g.scale().clone();
    let alpha = v[k];
    let mut kappa1 = 0.0;
    let mut kappa2 = 0.0;
    let mut atoms1: Vec<(f64, f64)> = Vec::new();
    let mut atoms2: Vec<(f64, f64)> = Vec::new();
    let finite_left_end = xs[0] <= iv.left && spec.s_left().is_finite();
    let finite_right_end = xs[n - 1] >= iv.right && spec.s_right().is_finite();
    if k == 0 && finite_left_end {
        kappa1 = dp[0];
    } else if k == n - 1 && finite_right_end {
        kappa2 = -dm[n - 1];
    } else {
        if dp[k] > 0.0 {
            atoms1.push((xs[k], dp[k]));
        }
        if dm[k] < 0.0 {
            atoms2.push((xs[k], -dm[k]));
        }
    }
    // node jumps away from c*
    for i in 0..n {
        if i == k || !iv.contains(xs[i]) {
            continue;
        }
        let jump = dp[i] - dm[i];
        if jump > noise {
            if i > k {
                atoms1.push((xs[i], jump));
            } else {
                atoms2.push((xs[i], jump));
            }
        }
    }
    // cell masses and centroids (exact at the nodes by summation by parts)
    let mut raw: Vec<(f64, f64)> = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let h = s[i + 1] - s[i];
        let m = dm[i + 1] - dp[i];
        let m = if m > noise { m } else { 0.0 };
        let centroid = if m <= 0.0 {
            0.5 * (s[i] + s[i + 1])
        } else if i >= k {
            let q = v[i + 1] - v[i] - dp[i] * h;
            (s[i + 1] - q / m).clamp(s[i], s[i + 1])
        } else {
            let q = v[i] - v[i + 1] + dm[i + 1] * h;
            (s[i] + q / m).clamp(s[i], s[i + 1])
        };
        raw.push((m, centroid));
    }
    let can_spread = g.scale().derivative(0.5 * (xs[0] + xs[1]).max(iv.left)).is_some();
    let mut cells = Vec::with_capacity(n - 1);
    let mut dens = CellDensity { lo: vec![], hi: vec![], smid: vec![], a: vec![], b: vec![], scale: scale.clone() };
    let mut dens_any = false;
    for i in 0..n - 1 {
        let (m, c) = raw[i];
        let h = s[i + 1] - s[i];
        let incr = i >= k;
        let same_side = |j: usize| (j >= k) == incr;
        let neigh: Vec<f64> = [i.checked_sub(1), (i + 1 < n - 1).then_some(i + 1)]
            .into_iter()
            .flatten()
            .filter(|&j| same_side(j))
            .map(|j| raw[j].0)
            .collect();
        let avg = if neigh.is_empty() { 0.0 } else { neigh.iter().sum::<f64>() / neigh.len() as f64 };
        let smid = 0.5 * (s[i] + s[i + 1]);
        let offset = c - smid;
        let spiky = !neigh.is_empty() && m > opts.atom_factor * avg;
        let lopsided = offset.abs() > h / 6.0 * (1.0 - 1e-12);
        let as_atom = m > 0.0 && (spiky || lopsided || !can_spread);
        if m > 0.0 {
            if as_atom {
                let loc = scale.inverse(c).clamp(xs[i], xs[i + 1]);
                let loc = if iv.contains(loc) { loc } else { scale.inverse(smid) };
                if incr {
                    atoms1.push((loc, m));
                } else {
                    atoms2.push((loc, m));
                }
            } else {
                let a = m / h;
                let b = 12.0 * a * offset / (h * h);
                dens.lo.push(xs[i]);
                dens.hi.push(xs[i + 1]);
                dens.smid.push(smid);
                dens.a.push(a);
                dens.b.push(b);
                dens_any = true;
            }
        }
        cells.push(CellMass { lo: xs[i], hi: xs[i + 1], increasing_side: incr, mass: m, centroid_s: c, as_atom });
    }

    let build = |atoms: &[(f64, f64)], lo: f64, hi: f64, incr: bool| -> Result<RadonMeasure> {
        let mut m = RadonMeasure::zero(iv);
        if dens_any && lo < hi {
            let sel: Vec<usize> =
                (0..dens.lo.len()).filter(|&j| (dens.lo[j] >= xs[k]) == incr && dens.lo[j] >= lo && dens.hi[j] <= hi).collect();
            if !sel.is_empty() {
                let part = CellDensity {
                    lo: sel.iter().map(|&j| dens.lo[j]).collect(),
                    hi: sel.iter().map(|&j| dens.hi[j]).collect(),
                    smid: sel.iter().map(|&j| dens.smid[j]).collect(),
                    a: sel.iter().map(|&j| dens.a[j]).collect(),
                    b: sel.iter().map(|&j| dens.b[j]).collect(),
                    scale: scale.clone(),
                };
                let bps: Vec<f64> = part.lo.iter().chain(part.hi.iter()).copied().collect();
                let (slo, shi) = (part.lo[0], *part.hi.last().unwrap());
                let f = Arc::new(move |y: f64| part.eval(y));
                m = RadonMeasure::with_density(iv, Density::from_fn("cellwise affine in s", f))
                    .with_breakpoints(&bps)
                    .with_support(slo.max(iv.left), shi.min(iv.right))?;
            }
        }
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(x, w) in atoms {
            match merged.iter_mut().find(|a| a.0 == x) {
                Some(a) => a.1 += w,
                None => merged.push((x, w)),
            }
        }
        for (x, w) in merged {
            if w > 0.0 && iv.contains(x) {
                m = m.with_atom(x, w)?;
            }
        }
        Ok(m)
    };
    let mu1 = build(&atoms1, xs[k], xs[n - 1], true)?.with_label("μ₁");
    let mu2 = build(&atoms2, xs[0], xs[k], false)?.with_label("μ₂");
    Ok(ChoquetDecomposition { alpha, kappa1, kappa2, mu1, mu2, cstar: xs[k], cells })
}

/// `α + κ₁(s(x)-s(ℓ)) + κ₂(s(r)-s(x)) + ∫(s(x)-s(y))⁺μ₁(dy) + ∫(s(y)-s(x))⁺μ₂(dy)`.
pub fn choquet_reconstruct(d: &ChoquetDecomposition, spec: &DiffusionSpec, x: f64) -> Result<f64> {
    let sx = spec.s(x);
    let mut total = d.alpha;
    if d.kappa1 != 0.0 {
        if !spec.s_left().is_finite() {
            return Err(Error::NonIntegrable("κ₁ must vanish when s(ℓ) is infinite".into()));
        }
        total += d.kappa1 * (sx - spec.s_left());
    }
    if d.kappa2 != 0.0 {
        if !spec.s_right().is_finite() {
            return Err(Error::NonIntegrable("κ₂ must vanish when s(r) is infinite".into()));
        }
        total += d.kappa2 * (spec.s_right() - sx);
    }
    let tol = Tolerance::tight();
    let iv = spec.interval();
    let scale = spec.scale();
    let span = |m: &RadonMeasure| -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        if m.density().is_some() {
            let (a, b) = m.support().unwrap_or((iv.left, iv.right));
            lo = a;
            hi = b;
        }
        for &(y, _) in m.atoms() {
            lo = lo.min(y - 1e-9 * (1.0 + y.abs()));
            hi = hi.max(y);
        }
        (lo < hi).then_some((lo.max(iv.left), hi.min(iv.right)))
    };
    if let Some((lo, _)) = span(&d.mu1) {
        if lo < x {
            let v = d.mu1.integrate_tol(&|y| (sx - scale.eval(y)).max(0.0), lo, x, tol);
            total += v.map_err(|e| Error::NonIntegrable(format!("∫(s(x)-s(y))⁺μ₁(dy) at x = {x}: {e}")))?;
        }
    }
    if let Some((_, hi)) = span(&d.mu2) {
        if x < hi {
            let v = d.mu2.integrate_tol(&|y| (scale.eval(y) - sx).max(0.0), x, hi, tol);
            total += v.map_err(|e| Error::NonIntegrable(format!("∫(s(y)-s(x))⁺μ₂(dy) at x = {x}: {e}")))?;
        }
    }
    Ok(total)
}

/// Revuz measure `μ₁ + μ₂` of the compensator of `g(X)`.
pub fn compensator_measure(d: &ChoquetDecomposition) -> Result<RadonMeasure> {
    Ok(d.mu1.add(&d.mu2)?.with_label("μ₁ + μ₂"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::uniform_grid;
    use crate::measure::Interval;

    fn bm() -> DiffusionSpec {
        DiffusionSpec::brownian(Interval::real_line())
    }

    fn closed(grid: Vec<f64>, src: &str) -> GridFunction {
        GridFunction::from_expr(grid, ScaleFunction::natural(Interval::real_line()), &Expr::parse(src).unwrap()).unwrap()
    }

    #[test]
    fn subharmonic_checks() {
        let spec = bm();
        let g = closed(uniform_grid(-1.0, 1.0, 41), "max(x - 0.3, 0)");
        assert!(check_subharmonic(&g, &spec, 1e-12).ok);
        let neg = closed(uniform_grid(0.1, 2.0, 20), "-x");
        assert_eq!(check_subharmonic(&neg, &spec, 1e-12).violation.unwrap().kind, ViolationKind::Negativity);
        let i = Interval::new(0.0, std::f64::consts::PI).unwrap();
        let sin = GridFunction::from_expr(
            uniform_grid(0.1, 3.0, 30),
            ScaleFunction::natural(i),
            &Expr::parse("sin(x)").unwrap(),
        )
        .unwrap();
        let spec_pi = DiffusionSpec::brownian(i);
        assert_eq!(check_subharmonic(&sin, &spec_pi, 1e-12).violation.unwrap().kind, ViolationKind::Convexity);
    }

    #[test]
    fn derivative_at_a_kink() {
        let g = closed(uniform_grid(-2.0, 2.0, 9), "max(x - 1, 0)");
        assert!((s_derivative(&g, 1.0, Side::Right).unwrap() - 1.0).abs() < 1e-12);
        assert!(s_derivative(&g, 1.0, Side::Left).unwrap().abs() < 1e-12);
        let e = closed(uniform_grid(-2.0, 2.0, 9), "exp(sqrt(2)*x)");
        for side in [Side::Left, Side::Right] {
            assert!((s_derivative(&e, 0.0, side).unwrap() - 2f64.sqrt()).abs() < 1e-9);
        }
        let aff = closed(uniform_grid(-2.0, 2.0, 9), "3*x + 1");
        assert!((s_derivative(&aff, 0.7, Side::Left).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn infinite_scale_endpoint_is_unsupported() {
        let g = closed(uniform_grid(-2.0, 2.0, 9), "exp(x)");
        assert!(matches!(s_derivative(&g, f64::NEG_INFINITY, Side::Right), Err(Error::Unsupported(_))));
    }

    #[test]
    fn extremal_hinge_decomposes_to_unit_atom() {
        let spec = bm();
        let g = closed(uniform_grid(-1.0, 1.0, 41), "max(x - 0.3, 0)");
        let d = choquet_decompose(&g, &spec).unwrap();
        assert_eq!(d.alpha, 0.0);
        assert_eq!((d.kappa1, d.kappa2), (0.0, 0.0));
        assert_eq!(d.mu1.atoms().len(), 1, "{:?}", d.mu1.atoms());
        let (x, w) = d.mu1.atoms()[0];
        assert!((x - 0.3).abs() < 1e-9 && (w - 1.0).abs() < 1e-9, "{x} {w}");
        assert!(!d.mu2.has_mass());
        for &x in g.grid() {
            assert!((choquet_reconstruct(&d, &spec, x).unwrap() - g.eval(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn hinge_between_grid_points() {
        let spec = bm();
        let g = closed(uniform_grid(-1.0, 1.0, 40), "max(x - 0.3, 0)");
        let d = choquet_decompose(&g, &spec).unwrap();
        assert_eq!(d.mu1.atoms().len(), 1, "{:?}", d.mu1.atoms());
        let (x, w) = d.mu1.atoms()[0];
        assert!((x - 0.3).abs() < 1e-9 && (w - 1.0).abs() < 1e-9, "{:?}", d.mu1.atoms());
    }

    #[test]
    fn affine_function_on_bounded_scale_carries_kappa() {
        let i = Interval::new(0.0, 1.0).unwrap();
        let spec = DiffusionSpec::brownian(i);
        let g = GridFunction::from_expr(uniform_grid(0.0, 1.0, 11), ScaleFunction::natural(i), &Expr::parse("1 + 2*x").unwrap())
            .unwrap();
        let d = choquet_decompose(&g, &spec).unwrap();
        assert!((d.kappa1 - 2.0).abs() < 1e-9);
        assert_eq!(d.alpha, 1.0);
        assert!(!compensator_measure(&d).unwrap().has_mass());
        assert!((choquet_reconstruct(&d, &spec, 0.55).unwrap() - 2.1).abs() < 1e-9);
    }

    #[test]
    fn exponential_has_density_two_g() {
        let spec = bm();
        let g = closed(uniform_grid(-3.0, 3.0, 241), "exp(sqrt(2)*x)");
        let d = choquet_decompose(&g, &spec).unwrap();
        assert!(!d.mu2.has_mass());
        // cumulative μ₁((a, b]) against ∫ 2 e^{√2 y} dy = √2 (e^{√2 b} - e^{√2 a})
        let r2 = 2f64.sqrt();
        let (a, b) = (-1.0, 2.0);
        let got = d.mu1.mass(a, b).unwrap();
        let want = r2 * ((r2 * b).exp() - (r2 * a).exp());
        assert!((got - want).abs() < 1e-8 * want, "{got} {want}");
    }

    #[test]
    fn all_zero_decomposition_reconstructs_zero() {
        let spec = bm();
        let iv = Interval::real_line();
        let d = ChoquetDecomposition {
            alpha: 0.0,
            kappa1: 0.0,
            kappa2: 0.0,
            mu1: RadonMeasure::zero(iv),
            mu2: RadonMeasure::zero(iv),
            cstar: 0.0,
            cells: vec![],
        };
        assert_eq!(choquet_reconstruct(&d, &spec, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_delta_decomposition() {
        let spec = bm();
        let delta = 0.5;
        let iv = Interval::real_line();
        let d = ChoquetDecomposition {
            alpha: delta,
            kappa1: 0.0,
            kappa2: 0.0,
            mu1: RadonMeasure::atom(iv, 1.0, 1.0).unwrap(),
            mu2: RadonMeasure::zero(iv),
            cstar: 1.0,
            cells: vec![],
        };
        for x in [-2.0, 0.0, 1.0, 1.5, 4.0] {
            assert!((choquet_reconstruct(&d, &spec, x).unwrap() - (delta + (x - 1.0f64).max(0.0))).abs() < 1e-14);
        }
    }

    #[test]
    fn non_subharmonic_is_rejected() {
        let spec = bm();
        let g = closed(uniform_grid(-1.0, 1.0, 21), "1 - x^2");
        assert!(matches!(choquet_decompose(&g, &spec), Err(Error::NotSubharmonic(_))));
    }
}
