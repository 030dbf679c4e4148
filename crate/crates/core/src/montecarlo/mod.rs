//! Euler–Maruyama simulation of `Y = s(X)` with additive functionals,
//! hitting times and last-passage records, plus statistical checks of the
//! identities the analytic modules predict.

mod checks;

pub use checks::*;

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::measure::{RadonMeasure, Side};

/// How the local time at an atom of `μ_A` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocalTimeEstimator {
    /// Exact sample of the Brownian-bridge local time between grid points.
    #[default]
    Bridge,
    /// Occupation of the band `(y-ε, y+ε)` divided by its speed mass.
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
    pub epsilon_lt: f64,
    /// Absorbing bounds used where the state interval is unbounded.
    pub truncation: (f64, f64),
    pub local_time: LocalTimeEstimator,
    /// Paths stop on leaving `(a, b)`.
    pub exit: Option<(f64, f64)>,
    /// Levels whose first hitting times are recorded.
    pub levels: Vec<f64>,
    /// Pairs `(y, z)` for which `Λ^{y,z}` is recorded.
    pub passages: Vec<(f64, f64)>,
    /// Times at which `(X, A)` is recorded.
    pub snapshot_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            n_paths: 10_000,
            horizon: 10.0,
            seed: 0,
            epsilon_lt: 0.01,
            truncation: (-1e3, 1e3),
            local_time: LocalTimeEstimator::Bridge,
            exit: None,
            levels: vec![],
            passages: vec![],
            snapshot_times: vec![],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive and finite".into()));
        }
        if !(self.epsilon_lt > 0.0) {
            return Err(Error::Config("epsilon_lt must be positive".into()));
        }
        if !(self.truncation.0 < self.truncation.1) {
            return Err(Error::Config("truncation bounds must be increasing".into()));
        }
        if let Some((a, b)) = self.exit {
            if !(a < b) {
                return Err(Error::Config("exit interval must have a < b".into()));
            }
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= self.horizon)) {
            return Err(Error::Config("snapshot times must lie in [0, horizon]".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Band estimator needs `dt ≤ (2ε)²/4`.
    pub fn resolution_ok(&self) -> bool {
        self.local_time == LocalTimeEstimator::Bridge || self.dt <= self.epsilon_lt * self.epsilon_lt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    /// Time of the last crossing of `y` before `T_z`; `None` when there was
    /// none (`Λ^{y,z} = 0`).
    pub lambda: Option<f64>,
    pub t_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub x_end: f64,
    pub t_end: f64,
    pub a_end: f64,
    /// Side of `(a, b)` through which the path left.
    pub exit: Option<Side>,
    /// Side of the simulation window (truncation bound or finite endpoint)
    /// at which the path was absorbed.
    pub absorbed: Option<Side>,
    pub snapshots: Vec<Snapshot>,
    pub hits: Vec<Option<f64>>,
    pub passages: Vec<Passage>,
}

impl PathRecord {
    pub fn stopped(&self) -> bool {
        self.exit.is_some() || self.absorbed.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub config: SimConfig,
    pub x0: f64,
    pub spec_name: String,
    /// Label of the Revuz measure of `A`, if one was accumulated.
    pub pcaf: Option<String>,
    pub pcaf_has_mass: bool,
    pub resolution_ok: bool,
    pub paths: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.config.n_steps()).map(|n| n as f64 * self.config.dt).collect()
    }

    pub fn absorbed_fraction(&self) -> f64 {
        self.paths.iter().filter(|p| p.absorbed.is_some()).count() as f64 / self.paths.len() as f64
    }

    pub fn level_index(&self, y: f64) -> Option<usize> {
        self.config.levels.iter().position(|&l| l == y)
    }

    pub fn passage_index(&self, y: f64, z: f64) -> Option<usize> {
        self.config.passages.iter().position(|&p| p == (y, z))
    }

    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        self.config.snapshot_times.iter().position(|&s| s == t)
    }

    /// Per-path summary as CSV.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("path,x_end,t_end,a_end,exit,absorbed\n");
        let side = |s: Option<Side>| s.map(|s| s.to_string()).unwrap_or_default();
        for (i, p) in self.paths.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{:.17e},{:.17e},{:.17e},{},{}",
                p.x_end,
                p.t_end,
                p.a_end,
                side(p.exit),
                side(p.absorbed)
            );
        }
        out
    }
}

/// Piecewise-linear tables of `x(y)` and `σ_Y(y)` on `y = s(x)`.
struct Table {
    y: Vec<f64>,
    x: Vec<f64>,
    sig: Vec<f64>,
}

impl Table {
    fn build(spec: &DiffusionSpec, lo: f64, hi: f64) -> Result<Table> {
        let ds = spec.scale().clone();
        let dm = spec
            .speed_density()
            .ok_or_else(|| Error::UnsupportedSpec("speed measure must have a density and no atoms".into()))?;
        if ds.derivative(0.5 * (lo + hi)).is_none() {
            return Err(Error::UnsupportedSpec("scale function has no derivative".into()));
        }
        let iv = spec.interval();
        let nudge = |x: f64| {
            let room = 1e-9 * (hi - lo);
            if x <= iv.left {
                iv.left + room
            } else if x >= iv.right {
                iv.right - room
            } else {
                x
            }
        };
        let sigma = |x: f64| -> f64 {
            let x = nudge(x);
            let v = 2.0 * ds.derivative(x).unwrap_or(f64::NAN) / dm(x);
            v.sqrt()
        };
        let point = |x: f64| -> Result<(f64, f64, f64)> {
            let y = ds.eval(x);
            let s = sigma(x);
            if !y.is_finite() {
                return Err(Error::InfiniteScale(x));
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::UnsupportedSpec(format!("diffusion coefficient is not positive and finite at {x}")));
            }
            Ok((x, y, s))
        };
        let n0 = 64;
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        let min_width = (hi - lo) * 2f64.powi(-34);
        for i in 0..n0 {
            let xa = lo + (hi - lo) * i as f64 / n0 as f64;
            let xb = if i + 1 == n0 { hi } else { lo + (hi - lo) * (i + 1) as f64 / n0 as f64 };
            let (pa, pb) = (point(xa)?, point(xb)?);
            let mut stack = vec![(pa, pb)];
            let mut cell = Vec::new();
            while let Some((a, b)) = stack.pop() {
                let m = point(0.5 * (a.0 + b.0))?;
                let x_lin = a.0 + (m.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
                let x_ok = (x_lin - m.0).abs() <= 1e-9 * (1.0 + m.0.abs());
                let s_ok = (0.5 * (a.2 + b.2) - m.2).abs() <= 1e-7 * m.2;
                if (x_ok && s_ok) || b.0 - a.0 < min_width {
                    cell.push(a);
                } else {
                    stack.push((m, b));
                    stack.push((a, m));
                }
                if pts.len() + cell.len() > 4_000_000 {
                    return Err(Error::UnsupportedSpec("coefficient table does not resolve".into()));
                }
            }
            pts.extend(cell);
            if i + 1 == n0 {
                pts.push(pb);
            }
        }
        if pts.windows(2).any(|w| !(w[0].1 < w[1].1)) {
            return Err(Error::UnsupportedSpec("scale function is not strictly increasing on the window".into()));
        }
        Ok(Table {
            x: pts.iter().map(|p| p.0).collect(),
            y: pts.iter().map(|p| p.1).collect(),
            sig: pts.iter().map(|p| p.2).collect(),
        })
    }

    #[inline]
    fn locate(&self, y: f64) -> (usize, f64) {
        let n = self.y.len();
        let i = self.y.partition_point(|&v| v <= y).clamp(1, n - 1) - 1;
        (i, (y - self.y[i]) / (self.y[i + 1] - self.y[i]))
    }

    #[inline]
    fn x_at(&self, i: usize, w: f64) -> f64 {
        self.x[i] + w * (self.x[i + 1] - self.x[i])
    }

    #[inline]
    fn sig_at(&self, i: usize, w: f64) -> f64 {
        let w = w.clamp(0.0, 1.0);
        self.sig[i] + w * (self.sig[i + 1] - self.sig[i])
    }
}

/// What a path needs to accumulate `A`.
struct Pcaf {
    density: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// `(η = s(y), weight, band mass)` per atom.
    atoms: Vec<(f64, f64, f64, f64)>,
}

impl Pcaf {
    fn new(spec: &DiffusionSpec, mu: &RadonMeasure, eps: f64) -> Result<Pcaf> {
        let density = match mu.density() {
            None => None,
            Some(_) => {
                let dm = spec.speed_density().ok_or_else(|| {
                    Error::UnsupportedMeasure("the density of μ_A is not expressible against m".into())
                })?;
                let mu = mu.clone();
                let f: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |x| {
                    let r = mu.density_at(x);
                    if r == 0.0 {
                        0.0
                    } else {
                        r / dm(x)
                    }
                });
                Some(f)
            }
        };
        let iv = spec.interval();
        let mut atoms = Vec::new();
        for &(y, w) in mu.atoms() {
            let band = spec.speed().mass((y - eps).max(iv.left), (y + eps).min(iv.right))?;
            atoms.push((spec.s(y), w, y, band));
        }
        Ok(Pcaf { density, atoms })
    }
}

/// Simulates `config.n_paths` paths from `x0` with `A ≡ 0`.
pub fn simulate(spec: &DiffusionSpec, x0: f64, config: &SimConfig) -> Result<PathEnsemble> {
    run(spec, x0, config, None)
}

/// Simulates with the additive functional whose Revuz measure is `mu`.
pub fn simulate_with_pcaf(spec: &DiffusionSpec, x0: f64, config: &SimConfig, mu: &RadonMeasure) -> Result<PathEnsemble> {
    run(spec, x0, config, Some(mu))
}

/// Adds `A` to an existing ensemble. The Gaussian increments come from a
/// stream that `A` never touches, so the paths are reproduced exactly.
pub fn accumulate_pcaf(ensemble: &PathEnsemble, mu: &RadonMeasure, spec: &DiffusionSpec) -> Result<PathEnsemble> {
    if spec.name != ensemble.spec_name {
        return Err(Error::Precondition(format!(
            "ensemble was simulated for '{}', not '{}'",
            ensemble.spec_name, spec.name
        )));
    }
    run(spec, ensemble.x0, &ensemble.config, Some(mu))
}

fn run(spec: &DiffusionSpec, x0: f64, config: &SimConfig, mu: Option<&RadonMeasure>) -> Result<PathEnsemble> {
    config.validate()?;
    let iv = spec.interval();
    if !iv.contains(x0) {
        return Err(Error::Precondition(format!("start {x0} is outside the state interval")));
    }
    let mut lo = config.truncation.0.max(iv.left);
    let mut hi = config.truncation.1.min(iv.right);
    if let Some((a, b)) = config.exit {
        if !(a <= x0 && x0 <= b) {
            return Err(Error::Precondition(format!("start {x0} is outside the exit interval ({a}, {b})")));
        }
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config("an unbounded state interval needs finite truncation bounds".into()));
    }
    if !(lo <= x0 && x0 <= hi) {
        return Err(Error::Precondition(format!("start {x0} is outside the simulation window [{lo}, {hi}]")));
    }
    let table = Table::build(spec, lo, hi)?;
    let pcaf = match mu {
        Some(m) => Some(Pcaf::new(spec, m, config.epsilon_lt)?),
        None => None,
    };
    let pcaf_has_mass = match mu {
        Some(m) => m.has_mass(),
        None => false,
    };
    let s_of = |x: f64| spec.s(x);
    let y_exit = config.exit.map(|(a, b)| (s_of(a), s_of(b)));
    let (y_lo, y_hi) = (s_of(lo), s_of(hi));
    let levels: Vec<f64> = config.levels.iter().map(|&l| s_of(l)).collect();
    let passages: Vec<(f64, f64)> = config.passages.iter().map(|&(y, z)| (s_of(y), s_of(z))).collect();
    let mut snaps: Vec<(usize, f64)> = config
        .snapshot_times
        .iter()
        .map(|&t| (((t / config.dt) + 1e-9).floor() as usize, t))
        .collect();
    snaps.sort_by(|a, b| a.0.cmp(&b.0));
    let ctx = PathCtx {
        table: &table,
        pcaf: pcaf.as_ref(),
        y0: s_of(x0),
        x0,
        n_steps: config.n_steps(),
        dt: config.dt,
        eps: config.epsilon_lt,
        estimator: config.local_time,
        y_exit,
        window: (y_lo, y_hi),
        levels: &levels,
        passages: &passages,
        snaps: &snaps,
        snapshot_order: &config.snapshot_times,
        seed: config.seed,
    };
    let paths: Vec<PathRecord> = (0..config.n_paths).into_par_iter().map(|i| ctx.path(i as u64)).collect();
    Ok(PathEnsemble {
        config: config.clone(),
        x0,
        spec_name: spec.name.clone(),
        pcaf: mu.map(|m| m.label().to_string()),
        pcaf_has_mass,
        resolution_ok: config.resolution_ok(),
        paths,
    })
}

struct PathCtx<'a> {
    table: &'a Table,
    pcaf: Option<&'a Pcaf>,
    y0: f64,
    x0: f64,
    n_steps: usize,
    dt: f64,
    eps: f64,
    estimator: LocalTimeEstimator,
    y_exit: Option<(f64, f64)>,
    window: (f64, f64),
    levels: &'a [f64],
    passages: &'a [(f64, f64)],
    snaps: &'a [(usize, f64)],
    snapshot_order: &'a [f64],
    seed: u64,
}

#[inline]
fn crossed(y0: f64, y1: f64, level: f64) -> bool {
    (y0 - level) * (y1 - level) <= 0.0
}

impl PathCtx<'_> {
    fn path(&self, index: u64) -> PathRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * index);
        let mut lt_rng = ChaCha8Rng::seed_from_u64(self.seed);
        lt_rng.set_stream(2 * index + 1);
        let sq = self.dt.sqrt();
        let (mut y, mut x) = (self.y0, self.x0);
        // A = dt·Σ f(X_n) + Σ w·L̂
        let (mut f_sum, mut lt_sum) = (0.0f64, 0.0f64);
        let a_now = |f_sum: f64, lt_sum: f64| f_sum * self.dt + lt_sum;
        let mut snapshots = vec![Snapshot { t: 0.0, x: 0.0, a: 0.0 }; self.snaps.len()];
        let mut next_snap = 0;
        let mut hits = vec![None; self.levels.len()];
        let mut passages = vec![Passage { lambda: None, t_z: None }; self.passages.len()];
        let (mut exit, mut absorbed) = (None, None);
        let mut steps_done = self.n_steps;
        while next_snap < self.snaps.len() && self.snaps[next_snap].0 == 0 {
            snapshots[next_snap] = Snapshot { t: self.snaps[next_snap].1, x, a: 0.0 };
            next_snap += 1;
        }
        for n in 0..self.n_steps {
            let (i, w) = self.table.locate(y);
            let sig = self.table.sig_at(i, w);
            let z: f64 = rng.sample(StandardNormal);
            let y1 = y + sig * sq * z;
            let (i1, w1) = self.table.locate(y1);
            let x1 = self.table.x_at(i1, w1);
            if let Some(p) = self.pcaf {
                if let Some(f) = &p.density {
                    f_sum += f(x);
                }
                let v = sig * sig * self.dt;
                for &(eta, wt, loc, band) in &p.atoms {
                    match self.estimator {
                        LocalTimeEstimator::Bridge => {
                            let d = y1 - y;
                            let c = (y - eta).abs() + (y1 - eta).abs();
                            let gap = c * c - d * d;
                            if gap < 80.0 * v {
                                let u: f64 = 1.0 - lt_rng.gen::<f64>();
                                let l = (d * d - 2.0 * v * u.ln()).sqrt() - c;
                                if l > 0.0 {
                                    // m-normalised local time is half the semimartingale one
                                    lt_sum += wt * 0.5 * l;
                                }
                            }
                        }
                        LocalTimeEstimator::Band => {
                            if (x - loc).abs() < self.eps {
                                lt_sum += wt * self.dt / band;
                            }
                        }
                    }
                }
            }
            let t1 = (n + 1) as f64 * self.dt;
            for (k, &l) in self.levels.iter().enumerate() {
                if hits[k].is_none() && crossed(y, y1, l) {
                    hits[k] = Some(t1);
                }
            }
            for (k, &(ly, lz)) in self.passages.iter().enumerate() {
                let p = &mut passages[k];
                if p.t_z.is_none() {
                    if crossed(y, y1, ly) {
                        p.lambda = Some(t1);
                    }
                    if crossed(y, y1, lz) {
                        p.t_z = Some(t1);
                    }
                }
            }
            y = y1;
            x = x1;
            while next_snap < self.snaps.len() && self.snaps[next_snap].0 == n + 1 {
                snapshots[next_snap] = Snapshot { t: self.snaps[next_snap].1, x, a: a_now(f_sum, lt_sum) };
                next_snap += 1;
            }
            if let Some((ya, yb)) = self.y_exit {
                if y <= ya {
                    exit = Some(Side::Left);
                } else if y >= yb {
                    exit = Some(Side::Right);
                }
            }
            if exit.is_none() {
                let (wl, wh) = self.window;
                if y <= wl {
                    absorbed = Some(Side::Left);
                } else if y >= wh {
                    absorbed = Some(Side::Right);
                }
            }
            if exit.is_some() || absorbed.is_some() {
                steps_done = n + 1;
                break;
            }
        }
        let a_end = a_now(f_sum, lt_sum);
        while next_snap < self.snaps.len() {
            snapshots[next_snap] = Snapshot { t: self.snaps[next_snap].1, x, a: a_end };
            next_snap += 1;
        }
        // restore the caller's ordering of snapshot times
        let snapshots = self
            .snapshot_order
            .iter()
            .map(|t| *snapshots.iter().find(|s| s.t == *t).unwrap())
            .collect();
        PathRecord {
            x_end: x,
            t_end: steps_done as f64 * self.dt,
            a_end,
            exit,
            absorbed,
            snapshots,
            hits,
            passages,
        }
    }
}
