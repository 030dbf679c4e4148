//! Classification of each endpoint relative to an additive functional.

use std::fmt;

use serde::Serialize;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::measure::{
    improper_integral_keyed, BoundaryIntegral, CutoffSchedule, IntegralVerdict, RadonMeasure, Side, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryKind {
    ARegular,
    AEntrance,
    AExit,
    ANatural,
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryKind::ARegular => "ARegular",
            BoundaryKind::AEntrance => "AEntrance",
            BoundaryKind::AExit => "AExit",
            BoundaryKind::ANatural => "ANatural",
        })
    }
}

impl BoundaryKind {
    pub fn from_verdicts(arrival_finite: bool, departure_finite: bool) -> BoundaryKind {
        match (arrival_finite, departure_finite) {
            (true, true) => BoundaryKind::ARegular,
            (true, false) => BoundaryKind::AExit,
            (false, true) => BoundaryKind::AEntrance,
            (false, false) => BoundaryKind::ANatural,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryClass {
    pub side: Side,
    pub kind: BoundaryKind,
    /// `∫_ℓ^b μ((z,b)) s(dz)` (mirrored at `r`).
    pub verdict_x: IntegralVerdict,
    /// `∫_ℓ^b (s(b)-s(z)) μ(dz)` (mirrored at `r`).
    pub verdict_e: IntegralVerdict,
    pub b: f64,
}

/// Computes the two diagnostic integrals at `side` with reference point `b`
/// and maps them to a class. Inconclusive verdicts are errors.
pub fn classify(spec: &DiffusionSpec, mu: &RadonMeasure, side: Side, b: f64) -> Result<BoundaryClass> {
    classify_with(spec, mu, side, b, &CutoffSchedule::default())
}

pub fn classify_with(
    spec: &DiffusionSpec,
    mu: &RadonMeasure,
    side: Side,
    b: f64,
    schedule: &CutoffSchedule,
) -> Result<BoundaryClass> {
    if !mu.has_mass() {
        return Err(Error::ZeroMeasure);
    }
    if !spec.interval().contains(b) {
        return Err(Error::Precondition(format!("reference point {b} is not inside the state interval")));
    }
    let s_end = spec.s_limit(side);
    let sb = spec.s(b);
    let scale = spec.scale().clone();
    // By Fubini, ∫_ℓ^b μ((z,b)) s(dz) = ∫_{(ℓ,b)} (s(y)-s(ℓ)) μ(dy).
    let verdict_x = if !s_end.is_finite() {
        IntegralVerdict::structural(Verdict::Divergent, "infinite scale limit at this endpoint")
    } else {
        let sc = scale.clone();
        let f = move |y: f64| if y == b { 0.0 } else { (sc.eval(y) - s_end).abs() };
        improper_integral_keyed(mu, &f, side, b, schedule, BoundaryIntegral::Arrival)?
    };
    let verdict_x = verdict_x.decided(&format!("arrival integral at the {side} endpoint (b = {b})"))?;
    let f_e = move |y: f64| (sb - scale.eval(y)).abs();
    let verdict_e = improper_integral_keyed(mu, &f_e, side, b, schedule, BoundaryIntegral::Departure)?
        .decided(&format!("departure integral at the {side} endpoint (b = {b})"))?;
    let kind = BoundaryKind::from_verdicts(verdict_x.is_finite(), verdict_e.is_finite());
    Ok(BoundaryClass { side, kind, verdict_x, verdict_e, b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub left: BoundaryClass,
    pub right: BoundaryClass,
    /// Classes recomputed at the two quartile reference points.
    pub invariance: Vec<(f64, BoundaryKind, BoundaryKind)>,
}

impl ClassificationReport {
    pub fn b_invariant(&self) -> bool {
        self.invariance.iter().all(|(_, l, r)| *l == self.left.kind && *r == self.right.kind)
    }
}

/// Classifies both endpoints at the midpoint of `grid` and re-checks the
/// result at the grid quartiles.
pub fn classify_endpoints(spec: &DiffusionSpec, mu: &RadonMeasure, grid: &[f64]) -> Result<ClassificationReport> {
    let pts: Vec<f64> = grid.iter().copied().filter(|x| spec.interval().contains(*x)).collect();
    let (b, quartiles) = if pts.len() >= 2 {
        let n = pts.len();
        let (lo, hi) = (pts[0], pts[n - 1]);
        (0.5 * (lo + hi), vec![lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)])
    } else {
        let c = spec.interval().reference_point();
        let i = spec.interval();
        let q1 = if i.left.is_finite() { 0.5 * (i.left + c) } else { c - 1.0 };
        let q3 = if i.right.is_finite() { 0.5 * (i.right + c) } else { c + 1.0 };
        (c, vec![q1, q3])
    };
    let left = classify(spec, mu, Side::Left, b)?;
    let right = classify(spec, mu, Side::Right, b)?;
    let mut invariance = Vec::new();
    for q in quartiles {
        let l = classify(spec, mu, Side::Left, q)?.kind;
        let r = classify(spec, mu, Side::Right, q)?.kind;
        invariance.push((q, l, r));
    }
    Ok(ClassificationReport { left, right, invariance })
}

/// `lim_{x→endpoint} E^x[A_{T_y}] = ∫ |s(y)-s(z)| μ(dz)` over the part of
/// the interval beyond `y`; only defined at an entrance boundary.
pub fn entrance_escape_bound(spec: &DiffusionSpec, mu: &RadonMeasure, side: Side, y: f64) -> Result<f64> {
    let class = classify(spec, mu, side, y)?;
    if class.kind != BoundaryKind::AEntrance {
        return Err(Error::WrongClass(format!(
            "the {side} endpoint is {}, an escape bound exists only at an A-entrance boundary",
            class.kind
        )));
    }
    class
        .verdict_e
        .kind
        .value()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Unsupported("departure integral was fixed by an override without a value".into()))
}
