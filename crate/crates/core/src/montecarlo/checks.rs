use serde::Serialize;

use super::{simulate, simulate_with_pcaf, PathEnsemble, PathRecord, SimConfig};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::measure::{Interval, RadonMeasure, Side};
use crate::transform::TransformedDiffusion;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Estimate { mean, se: (var / n as f64).sqrt(), n }
    }

    pub fn scaled(&self, c: f64) -> Estimate {
        Estimate { mean: c * self.mean, se: c.abs() * self.se, n: self.n }
    }

    /// `|mean - target|` in standard errors. A zero standard error gives 0
    /// for agreement up to rounding and infinity otherwise.
    pub fn deviation(&self, target: f64) -> f64 {
        se_units(self.mean - target, self.se, target)
    }
}

fn se_units(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 * scale.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (i, w) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + w * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub target: f64,
    /// `(t, E[g(X_{t∧T}) e^{-A_{t∧T}}], deviation in SE)`.
    pub at_times: Vec<(f64, Estimate, f64)>,
    /// At `T_ab ∧ horizon`.
    pub at_exit: (Estimate, f64),
    pub max_deviation: f64,
    /// Fraction of paths still inside `(a, b)` at the horizon.
    pub unexited: f64,
    /// Some paths were absorbed at a truncation bound.
    pub surrogate: bool,
}

fn martingale_value(g: &dyn Fn(f64) -> f64, x: f64, a: f64) -> f64 {
    if a.is_infinite() {
        0.0
    } else {
        g(x) * (-a).exp()
    }
}

/// Estimates `E[g(X_{t∧T_ab}) e^{-A_{t∧T_ab}}]` at the recorded snapshot
/// times and at `T_ab`, against `g(x0)`.
pub fn check_iw_martingale(ens: &PathEnsemble, g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<MartingaleReport> {
    if ens.config.exit != Some((a, b)) {
        return Err(Error::Precondition(format!("ensemble must be stopped on leaving ({a}, {b})")));
    }
    let target = g(ens.x0);
    if !(target > 0.0) {
        return Err(Error::VanishingG { at: ens.x0, value: target });
    }
    let mut at_times = Vec::new();
    let mut max_dev: f64 = 0.0;
    for (k, &t) in ens.config.snapshot_times.iter().enumerate() {
        let v: Vec<f64> = ens.paths.iter().map(|p| martingale_value(g, p.snapshots[k].x, p.snapshots[k].a)).collect();
        let e = Estimate::from_samples(&v);
        let d = e.deviation(target);
        max_dev = max_dev.max(d);
        at_times.push((t, e, d));
    }
    let v: Vec<f64> = ens.paths.iter().map(|p| martingale_value(g, p.x_end, p.a_end)).collect();
    let e = Estimate::from_samples(&v);
    let d = e.deviation(target);
    max_dev = max_dev.max(d);
    let unexited = ens.paths.iter().filter(|p| p.exit.is_none()).count() as f64 / ens.paths.len() as f64;
    Ok(MartingaleReport {
        target,
        at_times,
        at_exit: (e, d),
        max_deviation: max_dev,
        unexited,
        surrogate: ens.absorbed_fraction() > 0.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LastPassageReport {
    /// `P^{x0}(T_z < T_ℓ, Λ^{y,z} = 0)`.
    pub probability: Estimate,
    /// `|s(z) - s(y)|` times the probability.
    pub lhs: Estimate,
    /// `(s(x0) - s(y))⁺`, or its mirror image.
    pub rhs: f64,
    pub deviation: f64,
    pub surrogate: bool,
}

/// Last-passage identity `(s(z)-s(y)) P^x(T_z < T_ℓ, Λ^{y,z} = 0) =
/// (s(x)-s(y))⁺` for `z` above `x ∨ y`, and its mirror for `z` below.
pub fn check_last_passage(ens: &PathEnsemble, spec: &DiffusionSpec, y: f64, z: f64) -> Result<LastPassageReport> {
    if y == z {
        return Err(Error::Precondition("last passage needs y ≠ z".into()));
    }
    let x0 = ens.x0;
    let upper = z > x0.max(y);
    if !upper && !(z < x0.min(y)) {
        return Err(Error::Precondition(format!("z = {z} must lie beyond both x0 = {x0} and y = {y}")));
    }
    let k = ens
        .passage_index(y, z)
        .ok_or_else(|| Error::Precondition(format!("ensemble did not record Λ^{{{y},{z}}}")))?;
    let (sx, sy, sz) = (spec.s(x0), spec.s(y), spec.s(z));
    if !sz.is_finite() {
        return Err(Error::InfiniteScale(z));
    }
    let ind: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| {
            let q = p.passages[k];
            (q.t_z.is_some() && q.lambda.is_none()) as u8 as f64
        })
        .collect();
    let probability = Estimate::from_samples(&ind);
    let lhs = probability.scaled((sz - sy).abs());
    let rhs = if upper { (sx - sy).max(0.0) } else { (sy - sx).max(0.0) };
    Ok(LastPassageReport { probability, lhs, rhs, deviation: lhs.deviation(rhs), surrogate: ens.absorbed_fraction() > 0.0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingReport {
    pub applicable: bool,
    pub note: String,
    /// `(t, median, 90% quantile)` of `g(X_t) e^{-A_t}`.
    pub horizons: Vec<(f64, f64, f64)>,
    pub decreasing: bool,
    /// Last median over first median.
    pub ratio: f64,
}

/// Quantiles of `g(X_t) e^{-A_t}` at the snapshot times, which should fall
/// toward zero for a recurrent base and a nonzero `μ_A`.
pub fn check_vanishing(ens: &PathEnsemble, g: &dyn Fn(f64) -> f64, spec: &DiffusionSpec) -> VanishingReport {
    let mut order: Vec<usize> = (0..ens.config.snapshot_times.len()).collect();
    order.sort_by(|&i, &j| ens.config.snapshot_times[i].partial_cmp(&ens.config.snapshot_times[j]).unwrap());
    let horizons: Vec<(f64, f64, f64)> = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> =
                ens.paths.iter().map(|p| martingale_value(g, p.snapshots[k].x, p.snapshots[k].a)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (ens.config.snapshot_times[k], quantile(&v, 0.5), quantile(&v, 0.9))
        })
        .collect();
    let decreasing = horizons.len() >= 2 && horizons.windows(2).all(|w| w[1].1 <= w[0].1);
    let ratio = match (horizons.first(), horizons.last()) {
        (Some(f), Some(l)) if f.1 > 0.0 => l.1 / f.1,
        _ => f64::NAN,
    };
    let mut notes = Vec::new();
    if spec.is_transient(ens.x0).transient {
        notes.push("the diffusion is transient, so no decay is predicted");
    }
    if !ens.pcaf_has_mass {
        notes.push("μ_A is zero, so no decay is predicted");
    }
    if ens.absorbed_fraction() > 0.0 {
        notes.push("some paths hit a truncation bound (surrogate)");
    }
    let applicable = !spec.is_transient(ens.x0).transient && ens.pcaf_has_mass;
    VanishingReport { applicable, note: notes.join("; "), horizons, decreasing, ratio }
}

/// Path functionals used to compare a measure-changed law with its direct
/// simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `1{T_first < T_second}` before the horizon, weighted at the stop.
    HitsBefore { first: f64, second: f64 },
    /// `1{X_{t∧T} ≥ level}`, weighted at `t∧T`.
    AboveAt { t: f64, level: f64 },
    /// `1`, weighted at `t∧T`.
    One { t: f64 },
}

impl Functional {
    /// Value of the functional and the state `(x, A)` at the stopping time
    /// where the likelihood ratio is taken.
    fn evaluate(&self, ens: &PathEnsemble, p: &PathRecord) -> Result<(f64, f64, f64)> {
        let snap = |t: f64| {
            ens.snapshot_index(t)
                .map(|k| p.snapshots[k])
                .ok_or_else(|| Error::Precondition(format!("no snapshot recorded at t = {t}")))
        };
        match *self {
            Functional::HitsBefore { first, second } => {
                let i = ens.level_index(first).ok_or_else(|| Error::Precondition(format!("level {first} not recorded")))?;
                let j =
                    ens.level_index(second).ok_or_else(|| Error::Precondition(format!("level {second} not recorded")))?;
                let v = match (p.hits[i], p.hits[j]) {
                    (Some(a), Some(b)) => a < b,
                    (Some(_), None) => true,
                    _ => false,
                };
                Ok((v as u8 as f64, p.x_end, p.a_end))
            }
            Functional::AboveAt { t, level } => {
                let s = snap(t)?;
                Ok(((s.x >= level) as u8 as f64, s.x, s.a))
            }
            Functional::One { t } => {
                let s = snap(t)?;
                Ok((1.0, s.x, s.a))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureChangeReport {
    pub direct: Estimate,
    pub reweighted: Estimate,
    /// `|direct - reweighted| / sqrt(se_d² + se_r²)`.
    pub deviation: f64,
    pub surrogate: bool,
}

/// `E_Q[F]` from a direct simulation of `Q` and from base paths weighted
/// by `g(X_T) e^{-A_T} / g(x0)`.
pub fn reweighting_agreement(
    base: &PathEnsemble,
    q: &PathEnsemble,
    g: &dyn Fn(f64) -> f64,
    functional: &Functional,
) -> Result<MeasureChangeReport> {
    if base.x0 != q.x0 {
        return Err(Error::Precondition("both ensembles must start at the same point".into()));
    }
    let g0 = g(base.x0);
    if !(g0 > 0.0) {
        return Err(Error::VanishingG { at: base.x0, value: g0 });
    }
    let direct: Vec<f64> = q.paths.iter().map(|p| functional.evaluate(q, p).map(|v| v.0)).collect::<Result<_>>()?;
    let weighted: Vec<f64> = base
        .paths
        .iter()
        .map(|p| functional.evaluate(base, p).map(|(f, x, a)| if f == 0.0 { 0.0 } else { f * martingale_value(g, x, a) / g0 }))
        .collect::<Result<_>>()?;
    let (direct, reweighted) = (Estimate::from_samples(&direct), Estimate::from_samples(&weighted));
    let se = (direct.se.powi(2) + reweighted.se.powi(2)).sqrt();
    Ok(MeasureChangeReport {
        direct,
        reweighted,
        deviation: se_units(direct.mean - reweighted.mean, se, direct.mean),
        surrogate: base.absorbed_fraction() > 0.0 || q.absorbed_fraction() > 0.0,
    })
}

/// Simulates the base diffusion with `A` and the transformed diffusion
/// without it, then compares the two estimates of `E_Q[F]`.
pub fn compare_measure_change(
    t: &TransformedDiffusion,
    mu: &RadonMeasure,
    x0: f64,
    config: &SimConfig,
    functional: &Functional,
) -> Result<MeasureChangeReport> {
    let base = simulate_with_pcaf(&t.base, x0, config, mu)?;
    let q_config = SimConfig { seed: config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15), ..config.clone() };
    let q = simulate(&t.spec_q, x0, &q_config)?;
    let g = t.g.clone();
    reweighting_agreement(&base, &q, &move |x| g.eval(x), functional)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub estimate: Estimate,
    /// `u_ab(x, y)`.
    pub target: f64,
    pub deviation: f64,
}

/// `E^x[L̂^y_{T_ab}]` against the Green kernel.
pub fn calibrate_local_time(
    spec: &DiffusionSpec,
    x0: f64,
    a: f64,
    b: f64,
    y: f64,
    config: &SimConfig,
) -> Result<CalibrationReport> {
    let target = spec.green_kernel(a, b, x0, y)?;
    let iv: Interval = spec.interval();
    let mu = RadonMeasure::atom(iv, y, 1.0)?;
    let cfg = SimConfig { exit: Some((a, b)), ..config.clone() };
    let ens = simulate_with_pcaf(spec, x0, &cfg, &mu)?;
    let unexited = ens.paths.iter().filter(|p| p.exit.is_none()).count();
    if unexited > 0 {
        return Err(Error::Precondition(format!("{unexited} paths did not leave ({a}, {b}) before the horizon")));
    }
    let v: Vec<f64> = ens.paths.iter().map(|p| p.a_end).collect();
    let estimate = Estimate::from_samples(&v);
    Ok(CalibrationReport { estimate, target, deviation: estimate.deviation(target) })
}

/// Exit side counts, used by reports.
pub fn exit_fractions(ens: &PathEnsemble) -> (f64, f64) {
    let n = ens.paths.len() as f64;
    let l = ens.paths.iter().filter(|p| p.exit == Some(Side::Left)).count() as f64;
    let r = ens.paths.iter().filter(|p| p.exit == Some(Side::Right)).count() as f64;
    (l / n, r / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> DiffusionSpec {
        DiffusionSpec::brownian(Interval::real_line())
    }

    #[test]
    fn estimate_of_constant() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!((e.mean, e.se), (2.0, 0.0));
        assert_eq!(e.deviation(2.0), 0.0);
        assert!(e.deviation(2.1).is_infinite());
    }

    #[test]
    fn trivial_martingale_is_exact() {
        let cfg = SimConfig { n_paths: 200, horizon: 1.0, exit: Some((-1.0, 1.0)), snapshot_times: vec![0.5], ..Default::default() };
        let ens = simulate(&bm(), 0.0, &cfg).unwrap();
        let r = check_iw_martingale(&ens, &|_| 1.0, -1.0, 1.0).unwrap();
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn local_time_calibration() {
        let cfg = SimConfig { n_paths: 10_000, dt: 1e-4, horizon: 50.0, ..Default::default() };
        let r = calibrate_local_time(&bm(), 1.0, 0.0, 2.0, 1.0, &cfg).unwrap();
        assert_eq!(r.target, 0.5);
        assert!(r.deviation < 3.0, "{r:?}");
    }

    #[test]
    fn last_passage_below_level() {
        let iv = Interval::new(0.0, f64::INFINITY).unwrap();
        let spec = DiffusionSpec::brownian(iv);
        let cfg = SimConfig { n_paths: 2000, horizon: 50.0, exit: Some((0.0, 3.0)), passages: vec![(1.0, 3.0)], ..Default::default() };
        let ens = simulate(&spec, 0.5, &cfg).unwrap();
        let r = check_last_passage(&ens, &spec, 1.0, 3.0).unwrap();
        assert_eq!(r.probability.mean, 0.0);
        assert_eq!(r.deviation, 0.0);
        assert!(check_last_passage(&ens, &spec, 3.0, 3.0).is_err());
    }

    #[test]
    fn vanishing_not_applicable_without_functional() {
        let cfg = SimConfig { n_paths: 100, horizon: 2.0, snapshot_times: vec![1.0, 2.0], ..Default::default() };
        let ens = simulate(&bm(), 0.0, &cfg).unwrap();
        let r = check_vanishing(&ens, &|_| 1.0, &bm());
        assert!(!r.applicable);
        assert!(!r.note.is_empty());
        assert_eq!(r.ratio, 1.0);
    }
}
