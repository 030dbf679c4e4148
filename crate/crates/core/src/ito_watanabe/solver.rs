//! Cellwise spectral discretisation of
//! `g(x) = a + κ(u(x)-u(e)) + ∫_{(e,x)} (u(x)-u(y)) g(y) μ(dy)`
//! where `u = ±s` increases along the marching direction.

use std::sync::OnceLock;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::measure::RadonMeasure;
use crate::quadrature::{gauss_legendre_8, Tolerance};

const DEGREE: usize = 12;
const NODES: usize = DEGREE + 1;

struct Basis {
    t: [f64; NODES],
    /// `s[j][k] = ∫_{-1}^{t_j} ℓ_k(t) dt` for the Lagrange basis `ℓ_k`.
    s: [[f64; NODES]; NODES],
}

fn basis() -> &'static Basis {
    static B: OnceLock<Basis> = OnceLock::new();
    B.get_or_init(|| {
        let mut t = [0.0; NODES];
        for (k, tk) in t.iter_mut().enumerate() {
            *tk = -(std::f64::consts::PI * k as f64 / DEGREE as f64).cos();
        }
        t[0] = -1.0;
        t[DEGREE] = 1.0;
        let mut w = [0.0; NODES];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        w[0] *= 0.5;
        w[DEGREE] *= 0.5;
        let lagrange = |tau: f64| -> [f64; NODES] {
            let mut out = [0.0; NODES];
            if let Some(k) = t.iter().position(|&tk| tk == tau) {
                out[k] = 1.0;
                return out;
            }
            let mut den = 0.0;
            for k in 0..NODES {
                out[k] = w[k] / (tau - t[k]);
                den += out[k];
            }
            out.iter_mut().for_each(|v| *v /= den);
            out
        };
        let (gx, gw) = gauss_legendre_8();
        let mut s = [[0.0; NODES]; NODES];
        for j in 1..NODES {
            let half = 0.5 * (t[j] + 1.0);
            for (xi, wi) in gx.iter().zip(gw) {
                let l = lagrange(-1.0 + half * (xi + 1.0));
                for k in 0..NODES {
                    s[j][k] += half * wi * l[k];
                }
            }
        }
        Basis { t, s }
    })
}

/// Boundary data `a + κ(u - u_e)`; `κ` must be zero when `u_e` is infinite.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Forcing {
    pub a: f64,
    pub kappa: f64,
    pub u_e: f64,
}

impl Forcing {
    pub fn at(&self, u: f64) -> f64 {
        if self.kappa == 0.0 {
            self.a
        } else {
            self.a + self.kappa * (u - self.u_e)
        }
    }
}

struct Cell {
    x: Vec<f64>,
    u: Vec<f64>,
    rho: Vec<f64>,
    /// Jacobian `|h|/2` of the map from `[-1, 1]`.
    half: f64,
    end_atom: f64,
}

impl Cell {
    fn is_empty(&self) -> bool {
        self.x.len() == 2
    }
}

/// Cells in marching order, starting at `start`.
pub(crate) struct Mesh {
    cells: Vec<Cell>,
    start: f64,
    start_atom: f64,
}

/// Nodal values per cell plus `(∫_{before} gμ, ∫_{before or at} gμ)` at each
/// cell boundary.
pub(crate) struct Pass {
    pub g: Vec<Vec<f64>>,
    pub mass: Vec<(f64, f64)>,
}

pub(crate) struct MeshParams {
    pub max_width: f64,
}

fn u_of(spec: &DiffusionSpec, forward: bool, x: f64) -> f64 {
    if forward {
        spec.s(x)
    } else {
        -spec.s(x)
    }
}

fn finite_end_distance(spec: &DiffusionSpec, x: f64) -> f64 {
    let iv = spec.interval();
    let mut d = f64::INFINITY;
    if iv.left.is_finite() {
        d = d.min(x - iv.left);
    }
    if iv.right.is_finite() {
        d = d.min(iv.right - x);
    }
    d
}

impl Mesh {
    /// Cells from `start` to the last of `targets` (sorted ascending) in the
    /// marching direction, split at targets, atoms and density breakpoints.
    pub fn build(
        spec: &DiffusionSpec,
        mu: &RadonMeasure,
        forward: bool,
        start: f64,
        targets: &[f64],
        params: &MeshParams,
    ) -> Result<Mesh> {
        let iv = spec.interval();
        let finish = if forward { targets[targets.len() - 1] } else { targets[0] };
        let ahead = |x: f64| if forward { x > start && x <= finish } else { x < start && x >= finish };
        let mut pts: Vec<f64> = targets.iter().copied().filter(|&x| ahead(x)).collect();
        pts.extend(mu.atoms().iter().map(|a| a.0).filter(|&x| ahead(x)));
        pts.extend(mu.breakpoints().iter().copied().filter(|&x| ahead(x) && iv.contains(x)));
        if let Some((lo, hi)) = mu.support() {
            pts.extend([lo, hi].into_iter().filter(|&x| ahead(x) && iv.contains(x)));
        }
        pts.push(finish);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        if !forward {
            pts.reverse();
        }
        let (hull_lo, hull_hi) = (targets[0], targets[targets.len() - 1]);
        let width = |x: f64| {
            let outside = if x < hull_lo {
                hull_lo - x
            } else if x > hull_hi {
                x - hull_hi
            } else {
                0.0
            };
            (0.2 * finite_end_distance(spec, x)).min(params.max_width.max(0.25 * outside))
        };
        let atom_at = |x: f64| mu.atoms().iter().filter(|a| a.0 == x).map(|a| a.1).sum::<f64>();
        let dir = if forward { 1.0 } else { -1.0 };
        let basis = basis();
        let mut cells = Vec::new();
        let mut prev = start;
        for &q in &pts {
            if q == prev {
                continue;
            }
            let probe = (0..NODES).any(|k| {
                let x = prev + (q - prev) * (basis.t[k] + 1.0) * 0.5;
                let x = if k == 0 || k == DEGREE { prev + (q - prev) * if k == 0 { 1e-9 } else { 1.0 - 1e-9 } } else { x };
                mu.density_at(x) != 0.0
            });
            if !probe {
                cells.push(Cell {
                    x: vec![prev, q],
                    u: vec![u_of(spec, forward, prev), u_of(spec, forward, q)],
                    rho: vec![0.0, 0.0],
                    half: 0.5 * (q - prev).abs(),
                    end_atom: atom_at(q),
                });
                prev = q;
                continue;
            }
            let mut x = prev;
            while x != q {
                let h = width(x);
                if !(h > 0.0) {
                    return Err(Error::Precondition(format!("cannot mesh toward {q}: zero width at {x}")));
                }
                let remaining = (q - x).abs();
                let next = if remaining <= h {
                    q
                } else if remaining < 2.0 * h {
                    x + dir * 0.5 * remaining
                } else {
                    x + dir * h
                };
                cells.push(Self::dense_cell(spec, mu, forward, x, next, if next == q { atom_at(q) } else { 0.0 })?);
                x = next;
            }
            prev = q;
        }
        Ok(Mesh { cells, start, start_atom: atom_at(start) })
    }

    fn dense_cell(spec: &DiffusionSpec, mu: &RadonMeasure, forward: bool, p: f64, q: f64, end_atom: f64) -> Result<Cell> {
        let basis = basis();
        let mut x = Vec::with_capacity(NODES);
        let mut u = Vec::with_capacity(NODES);
        let mut rho = Vec::with_capacity(NODES);
        let nudge = 1e-12 * (q - p);
        for k in 0..NODES {
            let xk = if k == 0 {
                p
            } else if k == DEGREE {
                q
            } else {
                p + (q - p) * (basis.t[k] + 1.0) * 0.5
            };
            // one-sided density values at the cell ends
            let probe = if k == 0 {
                p + nudge
            } else if k == DEGREE {
                q - nudge
            } else {
                xk
            };
            let r = mu.density_at(probe);
            if !r.is_finite() || r < 0.0 {
                return Err(Error::NonFinite { at: probe, context: "density of μ_A on the solver mesh".into() });
            }
            x.push(xk);
            u.push(u_of(spec, forward, xk));
            rho.push(r);
        }
        Ok(Cell { x, u, rho, half: 0.5 * (q - p).abs(), end_atom })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Cell boundaries in marching order, beginning with the start point.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = vec![self.start];
        b.extend(self.cells.iter().map(|c| *c.x.last().unwrap()));
        b
    }

    pub fn map_nodes(&self, f: &dyn Fn(f64) -> f64) -> Vec<Vec<f64>> {
        self.cells.iter().map(|c| c.x.iter().map(|&x| f(x)).collect()).collect()
    }

    /// One application of the integral operator to `g_old`.
    pub fn picard(&self, forcing: &Forcing, g_old: &[Vec<f64>]) -> Pass {
        let b = basis();
        let mut out = Vec::with_capacity(self.cells.len());
        let mut mass = Vec::with_capacity(self.cells.len() + 1);
        let g_start = g_old.first().map(|c| c[0]).unwrap_or(0.0);
        let mut m0 = self.start_atom * g_start;
        mass.push((0.0, m0));
        let mut integral = 0.0;
        for (cell, old) in self.cells.iter().zip(g_old) {
            let u_st = cell.u[0];
            let n = cell.x.len();
            let mut new = vec![0.0; n];
            if cell.is_empty() {
                for j in 0..2 {
                    new[j] = forcing.at(cell.u[j]) + integral + (cell.u[j] - u_st) * m0;
                }
                integral += (cell.u[1] - u_st) * m0;
            } else {
                let weighted: Vec<f64> = (0..n).map(|k| cell.rho[k] * old[k]).collect();
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += b.s[j][k] * weighted[k] * (cell.u[j] - cell.u[k]);
                    }
                    new[j] = forcing.at(cell.u[j]) + integral + (cell.u[j] - u_st) * m0 + cell.half * acc;
                }
                let last = n - 1;
                let mut p0 = 0.0;
                let mut p1 = 0.0;
                for k in 0..n {
                    p0 += b.s[last][k] * weighted[k];
                    p1 += b.s[last][k] * weighted[k] * (cell.u[last] - cell.u[k]);
                }
                integral += (cell.u[last] - u_st) * m0 + cell.half * p1;
                m0 += cell.half * p0;
            }
            let before = m0;
            m0 += cell.end_atom * old[n - 1];
            mass.push((before, m0));
            out.push(new);
        }
        Pass { g: out, mass }
    }

    /// Exact solve cell by cell: each cell is a small linear system coupling
    /// its nodes, with everything behind it already known.
    pub fn march(&self, forcing: &Forcing) -> Result<Pass> {
        let b = basis();
        let mut out = Vec::with_capacity(self.cells.len());
        let mut mass = Vec::with_capacity(self.cells.len() + 1);
        let g_start = forcing.at(self.cells.first().map(|c| c.u[0]).unwrap_or(0.0));
        let mut m0 = self.start_atom * g_start;
        mass.push((0.0, m0));
        let mut integral = 0.0;
        for cell in &self.cells {
            let u_st = cell.u[0];
            let n = cell.x.len();
            let new = if cell.is_empty() {
                let v: Vec<f64> = (0..2).map(|j| forcing.at(cell.u[j]) + integral + (cell.u[j] - u_st) * m0).collect();
                integral += (cell.u[1] - u_st) * m0;
                v
            } else {
                let mut a = [[0.0; NODES]; NODES];
                let mut rhs = [0.0; NODES];
                for j in 0..n {
                    rhs[j] = forcing.at(cell.u[j]) + integral + (cell.u[j] - u_st) * m0;
                    for k in 0..n {
                        a[j][k] = -cell.half * b.s[j][k] * cell.rho[k] * (cell.u[j] - cell.u[k]);
                    }
                    a[j][j] += 1.0;
                }
                let v = solve_dense(a, rhs).ok_or_else(|| {
                    Error::Singular(format!("cell system near x = {} is singular", cell.x[0]))
                })?;
                let last = n - 1;
                let mut p0 = 0.0;
                let mut p1 = 0.0;
                for k in 0..n {
                    let w = cell.rho[k] * v[k];
                    p0 += b.s[last][k] * w;
                    p1 += b.s[last][k] * w * (cell.u[last] - cell.u[k]);
                }
                integral += (cell.u[last] - u_st) * m0 + cell.half * p1;
                m0 += cell.half * p0;
                v.to_vec()
            };
            if let Some(bad) = new.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { at: cell.x[bad], context: "solution overflowed while marching".into() });
            }
            let before = m0;
            m0 += cell.end_atom * new[n - 1];
            mass.push((before, m0));
            out.push(new);
        }
        Ok(Pass { g: out, mass })
    }
}

fn solve_dense(mut a: [[f64; NODES]; NODES], mut b: [f64; NODES]) -> Option<[f64; NODES]> {
    for col in 0..NODES {
        let piv = (col..NODES).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..NODES {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..NODES {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; NODES];
    for row in (0..NODES).rev() {
        let mut acc = b[row];
        for k in row + 1..NODES {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Walks from `far` toward the integrating endpoint until the neglected part
/// of `∫ (u(x_ref)-u(y)) w(y) μ(dy)` is below `tol · w(x_ref)` for three
/// consecutive pieces. Returns the truncation point.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tail_start(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    forward: bool,
    far: f64,
    x_ref: f64,
    w: &dyn Fn(f64) -> f64,
    tol: f64,
    max_pieces: usize,
) -> Result<f64> {
    let iv = spec.interval();
    let end = if forward { iv.left } else { iv.right };
    let u_ref = u_of(spec, forward, x_ref);
    let scale = w(x_ref).abs().max(f64::MIN_POSITIVE);
    let f = |y: f64| (u_ref - u_of(spec, forward, y)).max(0.0) * w(y);
    let mut x = far;
    let mut step = 1.0f64.max(0.1 * far.abs());
    let mut quiet = 0;
    let q = Tolerance { abs: 1e-300, rel: 1e-6 };
    for _ in 0..max_pieces {
        let next = if end.is_finite() {
            end + 0.7 * (x - end)
        } else {
            step *= 1.25;
            if forward {
                x - step
            } else {
                x + step
            }
        };
        if next == x {
            return Ok(x);
        }
        let (lo, hi) = if forward { (next, x) } else { (x, next) };
        let piece = mu.integrate_tol(&f, lo, hi, q)?;
        if !piece.is_finite() {
            return Err(Error::NonIntegrable(format!("tail piece ({lo}, {hi}] of the solver integral is not finite")));
        }
        x = next;
        if piece <= tol * scale {
            quiet += 1;
            if quiet >= 3 {
                return Ok(x);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::NonIntegrable(format!(
        "the tail of ∫(s(x)-s(y))⁺ g μ_A(dy) toward {end} is still not negligible after {max_pieces} pieces"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integration_matrix_is_exact_for_polynomials() {
        let b = basis();
        // ∫_{-1}^{t} τ^5 dτ = (t^6 - 1)/6
        for j in 0..NODES {
            let got: f64 = (0..NODES).map(|k| b.s[j][k] * b.t[k].powi(5)).sum();
            let want = (b.t[j].powi(6) - 1.0) / 6.0;
            assert!((got - want).abs() < 1e-14, "{j}: {got} {want}");
        }
    }

    #[test]
    fn dense_solver() {
        let mut a = [[0.0; NODES]; NODES];
        let mut b = [0.0; NODES];
        for i in 0..NODES {
            a[i][i] = 2.0;
            if i > 0 {
                a[i][i - 1] = 1.0;
            }
            b[i] = 1.0;
        }
        let x = solve_dense(a, b).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 0.25).abs() < 1e-15);
    }
}
