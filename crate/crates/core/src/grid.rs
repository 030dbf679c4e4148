//! Functions of the state variable sampled on a grid and interpolated in
//! the scale coordinate.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measure::{ScalarFn, Side};
use crate::scale::ScaleFunction;

#[derive(Clone)]
pub struct ClosedForm {
    pub label: String,
    pub f: ScalarFn,
}

impl fmt::Debug for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosedForm({})", self.label)
    }
}

/// Samples on a strictly increasing grid; evaluation between nodes is
/// cubic Hermite in `s` when one-sided `s`-slopes are known and linear in
/// `s` otherwise. A closed form, when attached, takes precedence.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Vec<f64>,
    s_grid: Vec<f64>,
    values: Vec<f64>,
    slopes: Option<Vec<(f64, f64)>>,
    closed_form: Option<ClosedForm>,
    scale: ScaleFunction,
    pub label: String,
}

/// `n` equally spaced points on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "a grid needs at least two points");
    (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

fn validate_grid(grid: &[f64], scale: &ScaleFunction) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::Config("a grid needs at least two points".into()));
    }
    let iv = scale.interval();
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    if grid[0] < iv.left || grid[grid.len() - 1] > iv.right {
        return Err(Error::Config("grid leaves the state interval".into()));
    }
    let s: Vec<f64> = grid.iter().map(|&x| scale.eval(x)).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InfiniteScale(grid[s.iter().position(|v| !v.is_finite()).unwrap()]));
    }
    Ok(s)
}

impl GridFunction {
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>, scale: ScaleFunction) -> Result<GridFunction> {
        let s_grid = validate_grid(&grid, &scale)?;
        if values.len() != grid.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid values must be finite and match the grid length".into()));
        }
        Ok(GridFunction { grid, s_grid, values, slopes: None, closed_form: None, scale, label: "table".into() })
    }

    pub fn from_fn(grid: Vec<f64>, scale: ScaleFunction, label: impl Into<String>, f: ScalarFn) -> Result<GridFunction> {
        let s_grid = validate_grid(&grid, &scale)?;
        let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { at: grid[i], context: "function value on the grid".into() });
        }
        let label = label.into();
        Ok(GridFunction {
            grid,
            s_grid,
            values,
            slopes: None,
            closed_form: Some(ClosedForm { label: label.clone(), f }),
            scale,
            label,
        })
    }

    pub fn from_expr(grid: Vec<f64>, scale: ScaleFunction, expr: &Expr) -> Result<GridFunction> {
        let e = expr.clone();
        GridFunction::from_fn(grid, scale, expr.to_string(), Arc::new(move |x| e.eval(x)))
    }

    /// Attaches one-sided `s`-derivatives `(d⁻/ds, d⁺/ds)` at the nodes.
    pub fn with_slopes(mut self, slopes: Vec<(f64, f64)>) -> Result<GridFunction> {
        if slopes.len() != self.grid.len() {
            return Err(Error::Config("slope table must match the grid length".into()));
        }
        self.slopes = Some(slopes);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> GridFunction {
        self.label = label.into();
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> Option<&[(f64, f64)]> {
        self.slopes.as_deref()
    }

    pub fn closed_form(&self) -> Option<&ClosedForm> {
        self.closed_form.as_ref()
    }

    pub fn scale(&self) -> &ScaleFunction {
        &self.scale
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn node_index(&self, x: f64) -> Option<usize> {
        let i = self.grid.partition_point(|&p| p < x);
        (i < self.grid.len() && self.grid[i] == x).then_some(i)
    }

    fn end_slope(&self, side: Side) -> f64 {
        let n = self.grid.len();
        match (side, &self.slopes) {
            (Side::Left, Some(sl)) => sl[0].0,
            (Side::Right, Some(sl)) => sl[n - 1].1,
            (Side::Left, None) => (self.values[1] - self.values[0]) / (self.s_grid[1] - self.s_grid[0]),
            (Side::Right, None) => {
                (self.values[n - 1] - self.values[n - 2]) / (self.s_grid[n - 1] - self.s_grid[n - 2])
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if let Some(cf) = &self.closed_form {
            return (cf.f)(x);
        }
        self.interpolate(x)
    }

    /// Value from the samples alone, ignoring any closed form.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.grid.len();
        let sx = self.scale.eval(x);
        if x <= self.grid[0] {
            return self.values[0] + self.end_slope(Side::Left) * (sx - self.s_grid[0]);
        }
        if x >= self.grid[n - 1] {
            return self.values[n - 1] + self.end_slope(Side::Right) * (sx - self.s_grid[n - 1]);
        }
        let i = self.grid.partition_point(|&p| p <= x) - 1;
        let (s0, s1) = (self.s_grid[i], self.s_grid[i + 1]);
        let (g0, g1) = (self.values[i], self.values[i + 1]);
        let h = s1 - s0;
        let t = (sx - s0) / h;
        match &self.slopes {
            None => g0 + t * (g1 - g0),
            Some(sl) => {
                let (m0, m1) = (sl[i].1, sl[i + 1].0);
                let (t2, t3) = (t * t, t * t * t);
                (2.0 * t3 - 3.0 * t2 + 1.0) * g0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * g1
                    + (t3 - t2) * h * m1
            }
        }
    }

    /// Pointwise `λ₁ self + λ₂ other` on a common grid.
    pub fn combine(&self, l1: f64, other: &GridFunction, l2: f64) -> Result<GridFunction> {
        if self.grid != other.grid {
            return Err(Error::Precondition("cannot combine functions on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| l1 * a + l2 * b).collect();
        let slopes = match (&self.slopes, &other.slopes) {
            (Some(a), Some(b)) => {
                Some(a.iter().zip(b).map(|(p, q)| (l1 * p.0 + l2 * q.0, l1 * p.1 + l2 * q.1)).collect())
            }
            _ => None,
        };
        let closed_form = match (&self.closed_form, &other.closed_form) {
            (Some(a), Some(b)) => {
                let (f1, f2) = (a.f.clone(), b.f.clone());
                Some(ClosedForm {
                    label: format!("{l1}·({}) + {l2}·({})", a.label, b.label),
                    f: Arc::new(move |x| l1 * f1(x) + l2 * f2(x)),
                })
            }
            _ => None,
        };
        Ok(GridFunction {
            grid: self.grid.clone(),
            s_grid: self.s_grid.clone(),
            values,
            slopes,
            closed_form,
            scale: self.scale.clone(),
            label: format!("{l1}·{} + {l2}·{}", self.label, other.label),
        })
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v *= c);
        if let Some(sl) = &mut g.slopes {
            sl.iter_mut().for_each(|p| {
                p.0 *= c;
                p.1 *= c;
            });
        }
        if let Some(cf) = &g.closed_form {
            let f = cf.f.clone();
            g.closed_form = Some(ClosedForm { label: format!("{c}·({})", cf.label), f: Arc::new(move |x| c * f(x)) });
        }
        g
    }

    /// Drops the closed form so evaluation uses the samples only.
    pub fn without_closed_form(&self) -> GridFunction {
        let mut g = self.clone();
        g.closed_form = None;
        g
    }

    pub fn min_value(&self) -> (f64, f64) {
        let mut best = (self.grid[0], self.values[0]);
        for (x, v) in self.grid.iter().zip(&self.values) {
            if *v < best.1 {
                best = (*x, *v);
            }
        }
        best
    }

    pub fn sup_distance(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.grid.iter().zip(&self.values).map(|(x, v)| (v - f(*x)).abs()).fold(0.0, f64::max)
    }

    pub fn sup_relative_distance(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(x, v)| {
                let t = f(*x);
                (v - t).abs() / t.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}
