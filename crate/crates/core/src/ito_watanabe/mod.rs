//! Integral equations for nonnegative monotone subharmonic solutions,
//! fundamental pairs `(ψ_A, φ_A)` and Itô–Watanabe pair checks.

mod solver;

use serde::{Deserialize, Serialize};

use crate::boundary::{classify, BoundaryClass, BoundaryKind};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::measure::{improper_integral, CutoffSchedule, RadonMeasure, Side, Verdict};
use crate::quadrature::Tolerance;

use solver::{tail_start, Forcing, Mesh, MeshParams, Pass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `g = a + κ(s - s(ℓ)) + ∫ (s(x)-s(y))⁺ g(y) μ(dy)`
    Increasing,
    /// `g = a + κ(s(r) - s) + ∫ (s(y)-s(x))⁺ g(y) μ(dy)`
    Decreasing,
}

impl Direction {
    /// Endpoint carrying the boundary data.
    pub fn side(self) -> Side {
        match self {
            Direction::Increasing => Side::Left,
            Direction::Decreasing => Side::Right,
        }
    }

    fn forward(self) -> bool {
        self == Direction::Increasing
    }

    fn sign(self) -> f64 {
        if self.forward() {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalNorm {
    pub c: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub direction: Direction,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub natural_norm: Option<NaturalNorm>,
}

impl EquationSpec {
    pub fn increasing(a: f64, kappa: f64) -> EquationSpec {
        EquationSpec { direction: Direction::Increasing, a, kappa, natural_norm: None }
    }

    pub fn decreasing(a: f64, kappa: f64) -> EquationSpec {
        EquationSpec { direction: Direction::Decreasing, a, kappa, natural_norm: None }
    }

    /// Zero boundary data with the solution pinned to `alpha` at `c`.
    pub fn natural(direction: Direction, c: f64, alpha: f64) -> EquationSpec {
        EquationSpec { direction, a: 0.0, kappa: 0.0, natural_norm: Some(NaturalNorm { c, alpha }) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !v.is_finite() || v < 0.0;
        if bad(self.a) || bad(self.kappa) {
            return Err(Error::Inadmissible(format!(
                "boundary data must be finite and nonnegative, got a = {}, κ = {}",
                self.a, self.kappa
            )));
        }
        if let Some(n) = self.natural_norm {
            if !n.c.is_finite() || !(n.alpha > 0.0) || !n.alpha.is_finite() {
                return Err(Error::Inadmissible(format!("normalization needs finite c and α > 0, got ({}, {})", n.c, n.alpha)));
            }
        } else if self.a == 0.0 && self.kappa == 0.0 {
            return Err(Error::Inadmissible("a = κ = 0 without a normalization only admits g ≡ 0".into()));
        }
        Ok(())
    }

    fn forcing(&self, spec: &DiffusionSpec) -> Result<Forcing> {
        let u_e = self.direction.sign() * spec.s_limit(self.direction.side());
        if self.kappa > 0.0 && !u_e.is_finite() {
            return Err(Error::Inadmissible(format!(
                "κ > 0 needs a finite scale limit at the {} endpoint",
                self.direction.side()
            )));
        }
        Ok(Forcing { a: self.a, kappa: self.kappa, u_e })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Successive substitution `gₙ = T gₙ₋₁`.
    Picard,
    /// Direct cell-by-cell solve of the discretised equation.
    Marching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// `g₀ = a + κ(s - s(e))`.
    Base,
    /// `g₀ ≡ 0`; the first iterate is the `Base` start.
    Zero,
    /// The Gronwall majorant; iterates then decrease.
    Gronwall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSchedule {
    /// Geometric ratio of successive truncation distances in the scale
    /// coordinate (inverted toward an infinite scale limit).
    pub ratio: f64,
    pub max_steps: usize,
    pub tol: f64,
}

impl Default for TruncationSchedule {
    fn default() -> Self {
        TruncationSchedule { ratio: 0.5, max_steps: 60, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    pub start: Start,
    pub max_cell_width: f64,
    /// Relative size below which pieces of the integral beyond the grid
    /// are dropped.
    pub tail_tol: f64,
    pub max_tail_pieces: usize,
    pub truncation: TruncationSchedule,
    pub record_iterates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 100_000,
            method: Method::Picard,
            start: Start::Base,
            max_cell_width: 0.5,
            tail_tol: 1e-13,
            max_tail_pieces: 2000,
            truncation: TruncationSchedule::default(),
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    /// Every iterate moved in the expected direction (up from below, down
    /// from the Gronwall start).
    pub monotone: bool,
    /// `sup|Tg - g| / sup|g|` on the mesh.
    pub residual: f64,
    /// `(a + κ(s - s(e))) exp(∫(s(x)-s(y))⁺ μ(dy))` on the grid.
    pub gronwall_bound: Vec<f64>,
    pub gronwall_ok: bool,
    pub cells: usize,
    /// Point where the integral was truncated toward the boundary.
    pub truncation: f64,
    pub boundary: Option<BoundaryClass>,
    pub natural_steps: Option<usize>,
    /// Iterates on the grid, when requested.
    pub iterates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub g: GridFunction,
    pub report: SolveReport,
}

/// Values and one-sided `s`-slopes on a sorted point set.
struct Solved {
    xs: Vec<f64>,
    vals: Vec<f64>,
    slopes: Vec<(f64, f64)>,
    report: SolveReport,
}

impl Solved {
    fn at(&self, x: f64) -> Option<usize> {
        self.xs.iter().position(|&p| p == x)
    }

    fn scaled(mut self, c: f64) -> Solved {
        self.vals.iter_mut().for_each(|v| *v *= c);
        self.slopes.iter_mut().for_each(|p| {
            p.0 *= c;
            p.1 *= c;
        });
        self.report.gronwall_bound.iter_mut().for_each(|v| *v *= c);
        for it in &mut self.report.iterates {
            it.iter_mut().for_each(|v| *v *= c);
        }
        self
    }

    fn restrict(&self, spec: &DiffusionSpec, grid: &[f64], label: &str) -> Result<GridFunction> {
        let mut vals = Vec::with_capacity(grid.len());
        let mut slopes = Vec::with_capacity(grid.len());
        for &x in grid {
            let i = self.at(x).ok_or_else(|| Error::Precondition(format!("point {x} missing from the solve")))?;
            vals.push(self.vals[i]);
            slopes.push(self.slopes[i]);
        }
        Ok(GridFunction::from_values(grid.to_vec(), vals, spec.scale().clone())?.with_slopes(slopes)?.with_label(label))
    }
}

fn sorted_points(grid: &[f64], extra: &[f64]) -> Result<Vec<f64>> {
    if grid.iter().chain(extra).any(|x| !x.is_finite()) {
        return Err(Error::Config("grid points must be finite".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    let mut pts: Vec<f64> = grid.iter().chain(extra).copied().collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    Ok(pts)
}

fn reference_point(spec: &DiffusionSpec, pts: &[f64]) -> f64 {
    let inner: Vec<f64> = pts.iter().copied().filter(|&x| spec.interval().contains(x)).collect();
    if inner.is_empty() {
        spec.interval().reference_point()
    } else {
        inner[inner.len() / 2]
    }
}

/// Maps a pass on the mesh to values and `s`-slopes at `pts`.
fn extract(
    spec: &DiffusionSpec,
    mesh: &Mesh,
    pass: &Pass,
    forcing: &Forcing,
    dir: Direction,
    pts: &[f64],
) -> (Vec<f64>, Vec<(f64, f64)>) {
    let bounds = mesh.boundaries();
    let start = mesh.start();
    let sign = dir.sign();
    let kappa = forcing.kappa;
    let mut vals = Vec::with_capacity(pts.len());
    let mut slopes = Vec::with_capacity(pts.len());
    for &x in pts {
        let behind = if dir.forward() { x < start } else { x > start };
        let (v, excl, incl) = match bounds.iter().position(|&b| b == x) {
            Some(0) => {
                let v = pass.g.first().map(|c| c[0]).unwrap_or_else(|| forcing.at(sign * spec.s(x)));
                (v, pass.mass[0].0, pass.mass[0].1)
            }
            Some(i) => (*pass.g[i - 1].last().unwrap(), pass.mass[i].0, pass.mass[i].1),
            None if behind || bounds.len() == 1 => (forcing.at(sign * spec.s(x)), 0.0, 0.0),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        vals.push(v);
        // d/du from below is κ + (mass strictly behind); from above it adds the atom
        slopes.push(if dir.forward() { (kappa + excl, kappa + incl) } else { (-(kappa + incl), -(kappa + excl)) });
    }
    (vals, slopes)
}

fn sup_rel(new: &[Vec<f64>], old: &[Vec<f64>]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in new.iter().zip(old) {
        for (x, y) in a.iter().zip(b) {
            num = num.max((x - y).abs());
            den = den.max(x.abs());
        }
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Solves with the boundary data of `forcing` from `start` (or from an
/// automatically chosen truncation point) up to the far end of `pts`.
#[allow(clippy::too_many_arguments)]
fn solve_core(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    dir: Direction,
    forcing: Forcing,
    start: Option<f64>,
    pts: &[f64],
    opts: &SolveOptions,
    method: Method,
) -> Result<Solved> {
    let iv = spec.interval();
    let forward = dir.forward();
    let sign = dir.sign();
    let inner: Vec<f64> = pts.iter().copied().filter(|&x| iv.contains(x)).collect();
    if inner.is_empty() {
        return Err(Error::Config("no grid point lies inside the state interval".into()));
    }
    let x_ref = if forward { inner[0] } else { inner[inner.len() - 1] };
    let start = match start {
        Some(s) => s,
        None => {
            let mut far = x_ref;
            if let Some(e) = mu.extent(dir.side()) {
                far = if forward { far.min(e) } else { far.max(e) };
            }
            if mu.has_density() {
                let w = |y: f64| forcing.at(sign * spec.s(y));
                tail_start(spec, mu, forward, far, x_ref, &w, opts.tail_tol, opts.max_tail_pieces)?
            } else {
                far
            }
        }
    };
    let targets: Vec<f64> = inner.iter().copied().filter(|&x| if forward { x > start } else { x < start }).collect();
    let targets = if targets.is_empty() { vec![start] } else { targets };
    let mesh = Mesh::build(spec, mu, forward, start, &targets, &MeshParams { max_width: opts.max_cell_width })?;

    let base = mesh.map_nodes(&|x| forcing.at(sign * spec.s(x)));
    let ones = mesh.map_nodes(&|_| 1.0);
    let exponent = mesh.picard(&Forcing { a: 0.0, kappa: 0.0, u_e: 0.0 }, &ones);
    let bound: Vec<Vec<f64>> =
        base.iter().zip(&exponent.g).map(|(b, e)| b.iter().zip(e).map(|(b, e)| b * e.exp()).collect()).collect();

    let mut iterates = Vec::new();
    let record = |g: &[Vec<f64>], iterates: &mut Vec<Vec<f64>>| {
        if opts.record_iterates {
            let p = Pass { g: g.to_vec(), mass: vec![(0.0, 0.0); mesh.cell_count() + 1] };
            iterates.push(extract(spec, &mesh, &p, &forcing, dir, pts).0);
        }
    };

    let (pass, iterations, monotone) = match method {
        Method::Marching => (mesh.march(&forcing)?, 0, true),
        Method::Picard => {
            let (mut g, up) = match opts.start {
                Start::Base => (base.clone(), true),
                Start::Zero => (mesh.map_nodes(&|_| 0.0), true),
                Start::Gronwall => {
                    if bound.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { at: start, context: "Gronwall majorant overflows".into() });
                    }
                    (bound.clone(), false)
                }
            };
            record(&g, &mut iterates);
            let mut monotone = true;
            let mut it = 0;
            let pass = loop {
                it += 1;
                let pass = mesh.picard(&forcing, &g);
                for (cn, (cb, co)) in pass.g.iter().zip(bound.iter().zip(&g)) {
                    for (n, (b, o)) in cn.iter().zip(cb.iter().zip(co)) {
                        if !n.is_finite() || *n > 10.0 * b * (1.0 + 1e-12) + 1e-300 {
                            return Err(Error::NoConvergence(format!(
                                "iterate {it} exceeds ten times the Gronwall bound ({n:.6e} vs {b:.6e})"
                            )));
                        }
                        let slack = 1e-12 * n.abs().max(o.abs());
                        if (up && *n < o - slack) || (!up && *n > o + slack) {
                            monotone = false;
                        }
                    }
                }
                let inc = sup_rel(&pass.g, &g);
                g = pass.g.clone();
                record(&g, &mut iterates);
                if inc < opts.tol {
                    break pass;
                }
                if it >= opts.max_iter {
                    return Err(Error::NoConvergence(format!(
                        "relative increment {inc:.3e} after {it} iterations (tol {:.1e})",
                        opts.tol
                    )));
                }
            };
            (pass, it, monotone)
        }
    };
    let check = mesh.picard(&forcing, &pass.g);
    let residual = sup_rel(&check.g, &pass.g);
    let gronwall_ok = pass
        .g
        .iter()
        .flatten()
        .zip(bound.iter().flatten())
        .all(|(g, b)| *g <= b * (1.0 + 1e-9) + 1e-300);
    let (vals, slopes) = extract(spec, &mesh, &pass, &forcing, dir, pts);
    let bp = Pass { g: bound, mass: pass.mass.clone() };
    let (gronwall_bound, _) = extract(spec, &mesh, &bp, &forcing, dir, pts);
    let report = SolveReport {
        method,
        iterations,
        monotone,
        residual,
        gronwall_bound,
        gronwall_ok,
        cells: mesh.cell_count(),
        truncation: start,
        boundary: None,
        natural_steps: None,
        iterates,
    };
    Ok(Solved { xs: pts.to_vec(), vals, slopes, report })
}

/// One application of the integral operator to `g` on its own grid.
pub fn apply_t(spec: &DiffusionSpec, mu: &RadonMeasure, eq: &EquationSpec, g: &GridFunction) -> Result<GridFunction> {
    let vals = g.values();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(i) = vals.iter().position(|v| *v < -1e-12 * scale.max(1.0)) {
        return Err(Error::Precondition(format!("the operator acts on nonnegative functions; g({}) = {}", g.grid()[i], vals[i])));
    }
    let dir = eq.direction;
    let forcing = eq.forcing(spec)?;
    let forward = dir.forward();
    let iv = spec.interval();
    let inner: Vec<f64> = g.grid().iter().copied().filter(|&x| iv.contains(x)).collect();
    if inner.is_empty() {
        return Err(Error::Config("no grid point lies inside the state interval".into()));
    }
    let x_ref = if forward { inner[0] } else { inner[inner.len() - 1] };
    let mut far = x_ref;
    if let Some(e) = mu.extent(dir.side()) {
        far = if forward { far.min(e) } else { far.max(e) };
    }
    let opts = SolveOptions::default();
    let w = |y: f64| g.eval(y).max(0.0);
    let start = if mu.has_density() {
        tail_start(spec, mu, forward, far, x_ref, &w, opts.tail_tol, opts.max_tail_pieces)?
    } else {
        far
    };
    let targets: Vec<f64> = inner.iter().copied().filter(|&x| if forward { x > start } else { x < start }).collect();
    let targets = if targets.is_empty() { vec![start] } else { targets };
    let mesh = Mesh::build(spec, mu, forward, start, &targets, &MeshParams { max_width: opts.max_cell_width })?;
    let old = mesh.map_nodes(&|x| g.eval(x));
    let pass = mesh.picard(&forcing, &old);
    let (vals, slopes) = extract(spec, &mesh, &pass, &forcing, dir, g.grid());
    GridFunction::from_values(g.grid().to_vec(), vals, spec.scale().clone())?
        .with_slopes(slopes)
        .map(|f| f.with_label(format!("T({})", g.label)))
}

/// Classifies the boundary carrying the data and checks the data against it.
fn admissible(spec: &DiffusionSpec, mu: &RadonMeasure, eq: &EquationSpec, pts: &[f64]) -> Result<BoundaryClass> {
    eq.validate()?;
    if !mu.has_mass() {
        return Err(Error::ZeroMeasure);
    }
    let side = eq.direction.side();
    let cls = classify(spec, mu, side, reference_point(spec, pts))?;
    let s_end = spec.s_limit(side);
    if eq.kappa > 0.0 && !s_end.is_finite() {
        return Err(Error::Inadmissible(format!(
            "κ must vanish where the scale limit is infinite ({side} endpoint)"
        )));
    }
    if eq.a > 0.0 && eq.kappa == 0.0 && !cls.verdict_e.is_finite() {
        return Err(Error::HypothesisFails(format!(
            "∫(s(b)-s(y)) μ_A(dy) diverges at the {side} endpoint, so no solution has g({side} end) = a > 0 with κ = 0"
        )));
    }
    let natural_data = eq.a == 0.0 && eq.kappa == 0.0;
    match cls.kind {
        BoundaryKind::ANatural if !natural_data => Err(Error::Inadmissible(format!(
            "the {side} endpoint is A-natural, where solutions and their s-derivatives vanish; use a = κ = 0 with a normalization"
        ))),
        BoundaryKind::ANatural if eq.natural_norm.is_none() => {
            Err(Error::Inadmissible(format!("the {side} endpoint is A-natural; a normalization (c, α) is required")))
        }
        BoundaryKind::AEntrance if eq.kappa > 0.0 => Err(Error::Inadmissible(format!(
            "the {side} endpoint is A-entrance, which forces κ = 0"
        ))),
        BoundaryKind::AExit if eq.a > 0.0 => Err(Error::Inadmissible(format!(
            "the {side} endpoint is A-exit, which forces g = 0 there (a = 0)"
        ))),
        k if k != BoundaryKind::ANatural && natural_data => Err(Error::Inadmissible(format!(
            "the {side} endpoint is {k}; a = κ = 0 only gives g ≡ 0 (need a + κ > 0)"
        ))),
        _ => Ok(cls),
    }
}

pub fn solve(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    eq: &EquationSpec,
    grid: &[f64],
    opts: &SolveOptions,
) -> Result<GridFunction> {
    solve_detailed(spec, mu, eq, grid, opts).map(|s| s.g)
}

/// Picard iteration from `g₀` with the Gronwall guard, or the natural
/// construction when the boundary is A-natural.
pub fn solve_detailed(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    eq: &EquationSpec,
    grid: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    let pts = sorted_points(grid, &[])?;
    let cls = admissible(spec, mu, eq, &pts)?;
    if cls.kind == BoundaryKind::ANatural {
        let n = eq.natural_norm.expect("checked by admissible");
        let mut sol = solve_natural_detailed(spec, mu, eq.direction.side(), n.c, n.alpha, grid, opts)?;
        sol.report.boundary = Some(cls);
        return Ok(sol);
    }
    let forcing = eq.forcing(spec)?;
    let mut solved = solve_core(spec, mu, eq.direction, forcing, None, &pts, opts, opts.method)?;
    solved.report.boundary = Some(cls);
    let label = match eq.direction {
        Direction::Increasing => "ψ",
        Direction::Decreasing => "φ",
    };
    Ok(Solution { g: solved.restrict(spec, grid, label)?, report: solved.report })
}

pub fn solve_natural(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    endpoint: Side,
    c: f64,
    alpha: f64,
    grid: &[f64],
    schedule: &TruncationSchedule,
) -> Result<GridFunction> {
    let opts = SolveOptions { truncation: *schedule, ..SolveOptions::default() };
    solve_natural_detailed(spec, mu, endpoint, c, alpha, grid, &opts).map(|s| s.g)
}

/// Solutions vanishing at truncation points `a_k → endpoint` with unit
/// slope there, renormalised to `alpha` at `c`, until they settle.
pub fn solve_natural_detailed(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    endpoint: Side,
    c: f64,
    alpha: f64,
    grid: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    let iv = spec.interval();
    if !iv.contains(c) || !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Precondition(format!("need c inside the interval and α > 0, got c = {c}, α = {alpha}")));
    }
    if !mu.has_mass() {
        return Err(Error::ZeroMeasure);
    }
    let pts = sorted_points(grid, &[c])?;
    let cls = classify(spec, mu, endpoint, c)?;
    if cls.kind != BoundaryKind::ANatural {
        return Err(Error::NotNatural(format!("the {endpoint} endpoint is {}", cls.kind)));
    }
    let dir = match endpoint {
        Side::Left => Direction::Increasing,
        Side::Right => Direction::Decreasing,
    };
    let sign = dir.sign();
    let sched = opts.truncation;
    if !(sched.ratio > 0.0 && sched.ratio < 1.0) {
        return Err(Error::Config(format!("truncation ratio must lie in (0, 1), got {}", sched.ratio)));
    }
    let inner: Vec<f64> = pts.iter().copied().filter(|&x| iv.contains(x)).collect();
    let (near, far) = match endpoint {
        Side::Left => (inner[0], inner[inner.len() - 1]),
        Side::Right => (inner[inner.len() - 1], inner[0]),
    };
    // work in u = ±s, increasing away from the endpoint
    let u_near = sign * spec.s(near);
    let u_end = sign * spec.s_limit(endpoint);
    let span = (sign * spec.s(far) - u_near).abs().max(1.0);
    let scale = spec.scale();
    let mut prev: Option<Solved> = None;
    let mut prev_point = f64::NAN;
    let mut history = Vec::new();
    for k in 1..=sched.max_steps {
        let u_k = if u_end.is_finite() {
            u_end + (u_near - u_end) * sched.ratio.powi(k as i32)
        } else {
            u_near - span * sched.ratio.powi(-(k as i32))
        };
        let a_k = scale.inverse(sign * u_k);
        let a_k = if dir.forward() { a_k.min(near) } else { a_k.max(near) };
        if a_k == prev_point || a_k == near || !iv.contains(a_k) {
            break;
        }
        prev_point = a_k;
        let forcing = Forcing { a: 0.0, kappa: 1.0, u_e: sign * spec.s(a_k) };
        let solved = match solve_core(spec, mu, dir, forcing, Some(a_k), &pts, opts, Method::Marching) {
            Ok(s) => s,
            Err(e @ Error::NonFinite { .. }) if prev.is_some() => {
                return Err(Error::NoConvergence(format!(
                    "truncated solutions stopped settling before overflow at a_{k} = {a_k} ({e}); last changes {history:?}"
                )))
            }
            Err(e) => return Err(e),
        };
        let gc = solved.vals[solved.at(c).unwrap()];
        if !(gc > 0.0) || !gc.is_finite() {
            return Err(Error::NoConvergence(format!("truncated solution from {a_k} is not positive at c = {c}")));
        }
        let mut solved = solved.scaled(alpha / gc);
        for (x, (v, sl)) in solved.xs.iter().zip(solved.vals.iter_mut().zip(solved.slopes.iter_mut())) {
            let behind = if dir.forward() { *x <= a_k } else { *x >= a_k };
            if behind {
                *v = 0.0;
                *sl = (0.0, 0.0);
            }
        }
        if let Some(p) = &prev {
            let change = grid
                .iter()
                .filter_map(|x| {
                    let i = solved.at(*x)?;
                    let (a, b) = (solved.vals[i], p.vals[i]);
                    (a != 0.0 || b != 0.0).then(|| (a - b).abs() / a.abs().max(b.abs()))
                })
                .fold(0.0f64, f64::max);
            history.push(change);
            if change < sched.tol {
                solved.report.natural_steps = Some(k);
                solved.report.boundary = Some(cls);
                solved.report.truncation = a_k;
                let label = match dir {
                    Direction::Increasing => "ψ",
                    Direction::Decreasing => "φ",
                };
                return Ok(Solution { g: solved.restrict(spec, grid, label)?, report: solved.report });
            }
        }
        prev = Some(solved);
    }
    Err(Error::NoConvergence(format!(
        "truncated solutions toward the {endpoint} endpoint did not settle to {:.1e}; relative changes {history:?}",
        sched.tol
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairNormalization {
    pub c: f64,
    pub alpha_psi: f64,
    pub alpha_phi: f64,
    /// `(a, κ)` for ψ when the left endpoint is A-regular.
    #[serde(default)]
    pub left_regular: Option<(f64, f64)>,
    /// `(a, κ)` for φ when the right endpoint is A-regular.
    #[serde(default)]
    pub right_regular: Option<(f64, f64)>,
}

impl PairNormalization {
    pub fn at(c: f64) -> PairNormalization {
        PairNormalization { c, alpha_psi: 1.0, alpha_phi: 1.0, left_regular: None, right_regular: None }
    }
}

#[derive(Debug, Clone)]
pub struct FundamentalPair {
    pub psi: GridFunction,
    pub phi: GridFunction,
    pub left: BoundaryClass,
    pub right: BoundaryClass,
    pub normalization: PairNormalization,
    /// Boundary data actually used, before normalization.
    pub psi_eq: EquationSpec,
    pub phi_eq: EquationSpec,
}

impl FundamentalPair {
    /// `ψ(x₀)φ(x₁) - ψ(x₁)φ(x₀)` at the grid ends, relative to the size of
    /// the products; zero would mean linear dependence.
    pub fn independence(&self) -> f64 {
        let n = self.psi.len();
        let (p, q) = (self.psi.values(), self.phi.values());
        let det = p[0] * q[n - 1] - p[n - 1] * q[0];
        det.abs() / (p[0] * q[n - 1]).abs().max((p[n - 1] * q[0]).abs()).max(f64::MIN_POSITIVE)
    }
}

fn one_side(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    dir: Direction,
    norm: &PairNormalization,
    grid: &[f64],
    opts: &SolveOptions,
) -> Result<(GridFunction, BoundaryClass, EquationSpec)> {
    let side = dir.side();
    let (alpha, regular) = match dir {
        Direction::Increasing => (norm.alpha_psi, norm.left_regular),
        Direction::Decreasing => (norm.alpha_phi, norm.right_regular),
    };
    let pts = sorted_points(grid, &[norm.c])?;
    let cls = classify(spec, mu, side, norm.c)?;
    let eq = match cls.kind {
        BoundaryKind::ANatural => EquationSpec::natural(dir, norm.c, alpha),
        BoundaryKind::AEntrance => EquationSpec { direction: dir, a: 1.0, kappa: 0.0, natural_norm: None },
        BoundaryKind::AExit => EquationSpec { direction: dir, a: 0.0, kappa: 1.0, natural_norm: None },
        BoundaryKind::ARegular => {
            let (a, kappa) = regular.ok_or_else(|| {
                Error::Inadmissible(format!(
                    "the {side} endpoint is A-regular: supply (a, κ) with a + κ > 0 for it"
                ))
            })?;
            if !(a + kappa > 0.0) {
                return Err(Error::Inadmissible(format!("A-regular data at the {side} endpoint needs a + κ > 0")));
            }
            EquationSpec { direction: dir, a, kappa, natural_norm: None }
        }
    };
    let label = if dir.forward() { "ψ_A" } else { "φ_A" };
    if cls.kind == BoundaryKind::ANatural {
        let sol = solve_natural_detailed(spec, mu, side, norm.c, alpha, grid, opts)?;
        return Ok((sol.g.with_label(label), cls, eq));
    }
    admissible(spec, mu, &eq, &pts)?;
    let solved = solve_core(spec, mu, dir, eq.forcing(spec)?, None, &pts, opts, opts.method)?;
    let gc = solved.vals[solved.at(norm.c).unwrap()];
    if !(gc > 0.0) {
        return Err(Error::Precondition(format!("{label} vanishes at the normalization point {}", norm.c)));
    }
    let solved = solved.scaled(alpha / gc);
    Ok((solved.restrict(spec, grid, label)?, cls, eq))
}

/// `(ψ_A, φ_A)` with boundary data chosen from the class of each endpoint.
pub fn fundamental_pair(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    norm: &PairNormalization,
    grid: &[f64],
    opts: &SolveOptions,
) -> Result<FundamentalPair> {
    if !mu.has_mass() {
        return Err(Error::ZeroMeasure);
    }
    if !spec.interval().contains(norm.c) {
        return Err(Error::Precondition(format!("normalization point {} is outside the interval", norm.c)));
    }
    let (psi, left, psi_eq) = one_side(spec, mu, Direction::Increasing, norm, grid, opts)?;
    let (phi, right, phi_eq) = one_side(spec, mu, Direction::Decreasing, norm, grid, opts)?;
    Ok(FundamentalPair { psi, phi, left, right, normalization: *norm, psi_eq, phi_eq })
}

#[derive(Debug, Clone)]
pub struct GeneralSolution {
    pub g: GridFunction,
    pub lambda1: f64,
    pub lambda2: f64,
    /// No zero on the interior grid points.
    pub strictly_positive: bool,
}

/// `λ₁ψ_A + λ₂φ_A`.
pub fn general_solution(pair: &FundamentalPair, lambda1: f64, lambda2: f64) -> Result<GeneralSolution> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1 + lambda2 > 0.0) {
        return Err(Error::Precondition(format!("need λ₁, λ₂ ≥ 0 with λ₁ + λ₂ > 0, got ({lambda1}, {lambda2})")));
    }
    let g = pair.psi.combine(lambda1, &pair.phi, lambda2)?.with_label(format!("{lambda1}·ψ_A + {lambda2}·φ_A"));
    let iv = g.scale().interval();
    let strictly_positive = g.grid().iter().zip(g.values()).filter(|(x, _)| iv.contains(**x)).all(|(_, v)| *v > 0.0);
    Ok(GeneralSolution { g, lambda1, lambda2, strictly_positive })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFit {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `sup |λ₁ψ + λ₂φ - g|` on the grid.
    pub misfit: f64,
}

/// `(λ₁, λ₂)` with `λ₁ψ(xᵢ) + λ₂φ(xᵢ) = g(xᵢ)` at two points.
pub fn fit_pair(g: &GridFunction, pair: &FundamentalPair, x1: f64, x2: f64) -> Result<PairFit> {
    let (p1, p2, q1, q2) = (pair.psi.eval(x1), pair.psi.eval(x2), pair.phi.eval(x1), pair.phi.eval(x2));
    let det = p1 * q2 - p2 * q1;
    let size = (p1 * q2).abs().max((p2 * q1).abs());
    if x1 == x2 || det.abs() <= 1e-12 * size || size == 0.0 {
        return Err(Error::Singular(format!("ψ and φ do not separate the points {x1} and {x2}")));
    }
    let (g1, g2) = (g.eval(x1), g.eval(x2));
    let lambda1 = (g1 * q2 - g2 * q1) / det;
    let lambda2 = (p1 * g2 - p2 * g1) / det;
    let misfit = g
        .grid()
        .iter()
        .map(|&x| (lambda1 * pair.psi.eval(x) + lambda2 * pair.phi.eval(x) - g.eval(x)).abs())
        .fold(0.0, f64::max);
    Ok(PairFit { lambda1, lambda2, misfit })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleResidual {
    pub a: f64,
    pub b: f64,
    pub x: f64,
    /// `g(a) P^x(T_a<T_b) + g(b) P^x(T_b<T_a)`
    pub lhs: f64,
    /// `g(x) + ∫ u_ab(x,y) g(y) μ(dy)`
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub triples: Vec<TripleResidual>,
    /// `sup|Tg - g| / sup|g|` on the grid of `g`, when an equation was given.
    pub equation_residual: Option<f64>,
    pub max_residual: f64,
}

/// Checks the exit identity on `(a, b, x)` triples and, optionally, the
/// global equation.
pub fn verify_pair(
    g: &GridFunction,
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    triples: &[(f64, f64, f64)],
    eq: Option<&EquationSpec>,
) -> Result<PairReport> {
    let tol = Tolerance::tight();
    let mut out = Vec::with_capacity(triples.len());
    for &(a, b, x) in triples {
        let p_b = spec.hitting_prob(x, a, b)?;
        let lhs = g.eval(a) * (1.0 - p_b) + g.eval(b) * p_b;
        let kernel = |y: f64| spec.green_kernel(a, b, x, y).unwrap_or(0.0) * g.eval(y);
        let mut rhs = g.eval(x);
        if a < x {
            rhs += mu.integrate_tol(&kernel, a, x, tol)?;
        }
        if x < b {
            rhs += mu.integrate_tol(&kernel, x, b, tol)?;
        }
        let residual = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
        out.push(TripleResidual { a, b, x, lhs, rhs, residual });
    }
    let equation_residual = match eq {
        None => None,
        Some(eq) => {
            let tg = apply_t(spec, mu, eq, g)?;
            let size = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            Some(g.values().iter().zip(tg.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / size)
        }
    };
    let max_residual = out.iter().map(|t| t.residual).chain(equation_residual).fold(0.0, f64::max);
    Ok(PairReport { triples: out, equation_residual, max_residual })
}

/// `g(x) - g(c) - κ(s(x)-s(c)) - ∫ (s(x∨y) - s(c∨y)) g(y) μ(dy)` at each
/// point; this form also admits sign-changing `g`.
pub fn anchored_residual(
    g: &GridFunction,
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    c: f64,
    kappa: f64,
    xs: &[f64],
) -> Result<Vec<f64>> {
    let tol = Tolerance::tight();
    let sc = spec.s(c);
    let gf = |y: f64| g.eval(y);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let sx = spec.s(x);
        let (lo, hi) = (x.min(c), x.max(c));
        // signed integral toward ℓ as the difference of its positive and negative parts
        let mut below = 0.0;
        for sign in [1.0, -1.0] {
            let part = |y: f64| (sign * gf(y)).max(0.0);
            match improper_integral(mu, &part, Side::Left, lo, &CutoffSchedule::default())?.kind {
                Verdict::Finite(v) => below += sign * v,
                _ => {
                    return Err(Error::NonIntegrable(format!(
                        "∫ g dμ_A near the left endpoint (up to {lo}) is not finite"
                    )))
                }
            }
        }
        let mut integral = (sx - sc) * below;
        if lo < hi {
            let k = |y: f64| (sx.max(spec.s(y)) - sc.max(spec.s(y))) * g.eval(y);
            integral += mu.integrate_tol(&k, lo, hi, tol)?;
        }
        out.push(g.eval(x) - g.eval(c) - kappa * (sx - sc) - integral);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::uniform_grid;
    use crate::measure::Interval;
    use crate::scale::ScaleFunction;

    fn delta_setup(delta: f64) -> (DiffusionSpec, RadonMeasure) {
        let iv = Interval::real_line();
        (DiffusionSpec::brownian(iv), RadonMeasure::atom(iv, 1.0, 1.0 / delta).unwrap())
    }

    #[test]
    fn operator_on_a_single_atom() {
        let (spec, mu) = delta_setup(0.5);
        let g = GridFunction::from_values(uniform_grid(-2.0, 3.0, 11), vec![0.7; 11], spec.scale().clone()).unwrap();
        let t = apply_t(&spec, &mu, &EquationSpec::increasing(0.7, 0.0), &g).unwrap();
        for (x, v) in t.grid().iter().zip(t.values()) {
            assert!((v - (0.7 + 0.7 * (x - 1.0f64).max(0.0) / 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_with_zero_measure_is_the_forcing() {
        let iv = Interval::new(0.0, 1.0).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::zero(iv);
        let g = GridFunction::from_values(uniform_grid(0.1, 0.9, 5), vec![3.0; 5], spec.scale().clone()).unwrap();
        let t = apply_t(&spec, &mu, &EquationSpec::increasing(0.2, 1.5), &g).unwrap();
        for (x, v) in t.grid().iter().zip(t.values()) {
            assert!((v - (0.2 + 1.5 * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_reproduces_x_squared() {
        let iv = Interval::new(0.0, f64::INFINITY).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::from_expr(iv, "2/y^2").unwrap();
        let g = GridFunction::from_expr(uniform_grid(0.2, 4.0, 20), ScaleFunction::natural(iv), &Expr::parse("x^2").unwrap())
            .unwrap();
        let t = apply_t(&spec, &mu, &EquationSpec { direction: Direction::Increasing, a: 0.0, kappa: 0.0, natural_norm: None }, &g)
            .unwrap();
        for (x, v) in t.grid().iter().zip(t.values()) {
            assert!((v - x * x).abs() < 1e-10 * x * x, "{x}: {v}");
        }
    }

    #[test]
    fn delta_pair() {
        for delta in [0.25, 0.5, 1.0] {
            let (spec, mu) = delta_setup(delta);
            let grid = uniform_grid(-5.0, 5.0, 101);
            let psi = solve(&spec, &mu, &EquationSpec::increasing(delta, 0.0), &grid, &SolveOptions::default()).unwrap();
            let phi = solve(&spec, &mu, &EquationSpec::decreasing(delta, 0.0), &grid, &SolveOptions::default()).unwrap();
            for (i, &x) in grid.iter().enumerate() {
                assert!((psi.values()[i] - (delta + (x - 1.0f64).max(0.0))).abs() < 1e-12);
                assert!((phi.values()[i] - (delta + (1.0 - x).max(0.0))).abs() < 1e-12);
            }
            let i = psi.node_index(1.0).unwrap();
            assert_eq!(psi.slopes().unwrap()[i], (0.0, 1.0));
            assert_eq!(phi.slopes().unwrap()[i], (-1.0, 0.0));
        }
    }

    #[test]
    fn exponential_via_natural() {
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let mu = RadonMeasure::lebesgue(Interval::real_line(), 2.0);
        let grid = uniform_grid(-3.0, 3.0, 61);
        let eq = EquationSpec::natural(Direction::Increasing, 0.0, 1.0);
        let g = solve(&spec, &mu, &eq, &grid, &SolveOptions::default()).unwrap();
        let r2 = 2f64.sqrt();
        for (x, v) in grid.iter().zip(g.values()) {
            let want = (r2 * x).exp();
            assert!((v - want).abs() < 1e-9 * want, "{x}: {v} vs {want}");
        }
    }

    #[test]
    fn x_squared_via_natural() {
        let iv = Interval::new(0.0, f64::INFINITY).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::from_expr(iv, "2/y^2").unwrap();
        let grid = uniform_grid(0.1, 10.0, 100);
        let g = solve_natural(&spec, &mu, Side::Left, 1.0, 1.0, &grid, &TruncationSchedule::default()).unwrap();
        for (x, v) in grid.iter().zip(g.values()) {
            assert!((v - x * x).abs() < 1e-8 * x * x, "{x}: {v}");
        }
    }

    #[test]
    fn admissibility() {
        let (spec, mu) = delta_setup(0.5);
        let grid = uniform_grid(-1.0, 2.0, 7);
        let err = solve(&spec, &mu, &EquationSpec::increasing(0.5, 1.0), &grid, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Inadmissible(_)), "{err}");
        let spec = DiffusionSpec::brownian(Interval::real_line());
        let leb = RadonMeasure::lebesgue(Interval::real_line(), 2.0);
        let err = solve(&spec, &leb, &EquationSpec::increasing(1.0, 0.0), &grid, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HypothesisFails(_)), "{err}");
    }

    #[test]
    fn triple_identity_by_hand() {
        let (spec, mu) = delta_setup(0.5);
        let g = GridFunction::from_expr(
            uniform_grid(-1.0, 3.0, 9),
            spec.scale().clone(),
            &Expr::parse("0.5 + max(x - 1, 0)").unwrap(),
        )
        .unwrap();
        let rep = verify_pair(&g, &spec, &mu, &[(0.0, 2.0, 1.0)], Some(&EquationSpec::increasing(0.5, 0.0))).unwrap();
        let t = rep.triples[0];
        assert!((t.lhs - 1.0).abs() < 1e-14 && (t.rhs - 1.0).abs() < 1e-14);
        assert!(rep.max_residual < 1e-12);
    }

    #[test]
    fn sign_changing_anchored_form() {
        let iv = Interval::new(-1.0, 1.0).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let mu = RadonMeasure::lebesgue(iv, 1.0);
        let g = GridFunction::from_expr(uniform_grid(-0.9, 0.9, 7), spec.scale().clone(), &Expr::parse("sinh(x)").unwrap())
            .unwrap();
        let r = anchored_residual(&g, &spec, &mu, 0.0, 1f64.cosh(), &[-0.8, -0.3, 0.4, 0.9]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9), "{r:?}");
    }
}
