use std::fmt::Write as _;
use std::fs;

use iwpairs::boundary::classify;
use iwpairs::catalog;
use iwpairs::config::{example_config, CheckConfig, Config, GSource, GridConfig};
use iwpairs::diffusion::DiffusionSpec;
use iwpairs::grid::GridFunction;
use iwpairs::ito_watanabe::{
    fundamental_pair, solve_detailed, verify_pair, Direction, EquationSpec, NaturalNorm, PairNormalization,
    SolveOptions, SolveReport,
};
use iwpairs::measure::Side;
use iwpairs::montecarlo::{
    calibrate_local_time, check_iw_martingale, check_last_passage, check_vanishing, compare_measure_change,
    simulate, simulate_with_pcaf, Functional, PathEnsemble, SimConfig,
};
use iwpairs::subharmonic::{choquet_decompose, choquet_reconstruct, s_derivative};
use iwpairs::transform::{extra_drift, q_hitting, q_local_time_mean, transform, transience_report};
use iwpairs::{Error, Result};

use crate::table::{Csv, VERSION_LINE};
use crate::Common;

pub enum Task {
    Classify,
    Solve,
    Decompose,
    Transform,
    Verify,
    Catalog { name: Option<String>, delta: f64 },
}

fn missing(block: &str) -> Error {
    Error::Config(format!("the configuration has no [{block}] block"))
}

fn load(common: &Common) -> Result<Config> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let src = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Config::parse(&src)
}

/// CSV to `--out` with the report on stdout, or CSV on stdout with the
/// report on stderr.
fn emit(common: &Common, csv: Option<String>, report: &str) -> Result<()> {
    match (&common.out, csv) {
        (Some(path), Some(csv)) => {
            fs::write(path, csv).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
            print!("{report}");
        }
        (None, Some(csv)) => {
            print!("{csv}");
            eprint!("{report}");
        }
        (_, None) => print!("{report}"),
    }
    Ok(())
}

pub fn run(task: Task, common: &Common) -> Result<()> {
    if let Task::Catalog { name, delta } = &task {
        return run_catalog(name.as_deref(), *delta);
    }
    let cfg = load(common)?;
    if common.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match task {
        Task::Classify => run_classify(&cfg, common),
        Task::Solve => run_solve(&cfg, common),
        Task::Decompose => run_decompose(&cfg, common),
        Task::Transform => run_transform(&cfg, common),
        Task::Verify => run_verify(&cfg, common),
        Task::Catalog { .. } => unreachable!(),
    }
}

fn run_catalog(name: Option<&str>, delta: f64) -> Result<()> {
    match name {
        None => {
            for ex in catalog::all() {
                let classes: Vec<String> = ex.classes.iter().map(|(s, k)| format!("{s}: {k}")).collect();
                println!("{:<16} {} [{}]", ex.name, ex.description, classes.join(", "));
            }
        }
        Some(n) => print!("{}", example_config(n, delta)?.to_toml()?),
    }
    Ok(())
}

fn endpoint_label(spec: &DiffusionSpec, side: Side) -> String {
    let v = spec.interval().endpoint(side);
    if v.is_infinite() {
        if v > 0.0 { "+∞".into() } else { "-∞".into() }
    } else {
        format!("{v}")
    }
}

fn run_classify(cfg: &Config, common: &Common) -> Result<()> {
    let t = cfg.classify.as_ref().ok_or_else(|| missing("classify"))?;
    let spec = cfg.spec()?;
    let mu = cfg.measure(&t.measure, &spec)?;
    let bs = if t.b.is_empty() { vec![spec.interval().reference_point()] } else { t.b.clone() };
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    let _ = writeln!(out, "diffusion: {}", spec.name);
    let _ = writeln!(out, "measure {}: {}", t.measure, mu.label());
    let mut invariant = true;
    for side in [Side::Left, Side::Right] {
        let classes = bs.iter().map(|&b| classify(&spec, &mu, side, b)).collect::<Result<Vec<_>>>()?;
        let first = &classes[0];
        invariant &= classes.iter().all(|c| c.kind == first.kind);
        let _ = writeln!(
            out,
            "{side}: {} at {} (b = {}; arrival integral {}; departure integral {})",
            first.kind,
            endpoint_label(&spec, side),
            first.b,
            first.verdict_x.kind,
            first.verdict_e.kind
        );
    }
    if bs.len() > 1 {
        let _ = writeln!(out, "b-invariance over {:?}: {}", bs, if invariant { "holds" } else { "VIOLATED" });
    }
    emit(common, None, &out)
}

fn node_slopes(g: &GridFunction, i: usize) -> (f64, f64) {
    if let Some(s) = g.slopes() {
        return s[i];
    }
    let x = g.grid()[i];
    (s_derivative(g, x, Side::Left).unwrap_or(f64::NAN), s_derivative(g, x, Side::Right).unwrap_or(f64::NAN))
}

fn options(cfg_tol: Option<f64>, common: &Common) -> SolveOptions {
    let mut o = SolveOptions::default();
    if let Some(t) = common.tol.or(cfg_tol) {
        o.tol = t;
    }
    o
}

fn describe_report(out: &mut String, name: &str, r: &SolveReport) {
    let _ = writeln!(out, "{name}: method {:?}, iterations {}, residual {:.3e}", r.method, r.iterations, r.residual);
    if let Some(b) = &r.boundary {
        let _ = writeln!(out, "  boundary: {} at the {} endpoint", b.kind, b.side);
    }
    if let Some(k) = r.natural_steps {
        let _ = writeln!(out, "  natural truncation steps: {k}");
    }
    if !r.gronwall_bound.is_empty() {
        let _ = writeln!(out, "  Gronwall bound respected: {}", r.gronwall_ok);
    }
    let _ = writeln!(out, "  monotone iterates: {}", r.monotone);
}

fn interior_triple(spec: &DiffusionSpec, grid: &[f64]) -> Vec<(f64, f64, f64)> {
    let pts: Vec<f64> = grid.iter().copied().filter(|x| spec.interval().contains(*x)).collect();
    if pts.len() < 3 {
        return vec![];
    }
    let n = pts.len();
    vec![(pts[n / 4], pts[(3 * n) / 4], pts[n / 2])]
}

fn run_solve(cfg: &Config, common: &Common) -> Result<()> {
    let t = cfg.solve.as_ref().ok_or_else(|| missing("solve"))?;
    let spec = cfg.spec()?;
    let mu = cfg.measure(&t.measure, &spec)?;
    let grid = t.grid.points()?;
    let mut opts = options(t.tol, common);
    if let Some(m) = t.method {
        opts.method = m;
    }
    if let Some(s) = t.start {
        opts.start = s;
    }
    let prec = cfg.output.precision;
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    match t.direction {
        Some(direction) => {
            let eq = EquationSpec {
                direction,
                a: t.a,
                kappa: t.kappa,
                natural_norm: t.c.map(|c| NaturalNorm { c, alpha: t.alpha.unwrap_or(1.0) }),
            };
            let sol = solve_detailed(&spec, &mu, &eq, &grid, &opts)?;
            let mut csv = Csv::new(prec, "solve", &["x", "s", "value", "ds_minus", "ds_plus"]);
            for (i, (&x, &v)) in sol.g.grid().iter().zip(sol.g.values()).enumerate() {
                let (l, r) = node_slopes(&sol.g, i);
                csv.row(&[x, spec.s(x), v, l, r]);
            }
            describe_report(&mut out, "solution", &sol.report);
            let margin = sol
                .g
                .values()
                .iter()
                .zip(&sol.report.gronwall_bound)
                .map(|(v, b)| v / b)
                .fold(f64::NEG_INFINITY, f64::max);
            if margin.is_finite() {
                let _ = writeln!(out, "  Gronwall margin max g/bound: {margin:.6}");
            }
            let check_eq = eq.natural_norm.is_none().then_some(&eq);
            let rep = verify_pair(&sol.g, &spec, &mu, &interior_triple(&spec, &grid), check_eq)?;
            let _ = writeln!(out, "  verification residual: {:.3e}", rep.max_residual);
            emit(common, Some(csv.finish()), &out)
        }
        None => {
            let c = t.c.ok_or_else(|| Error::Config("solving a pair needs the normalization point `c`".into()))?;
            let alpha = t.alpha.unwrap_or(1.0);
            let norm = PairNormalization {
                c,
                alpha_psi: alpha,
                alpha_phi: alpha,
                left_regular: t.left_regular,
                right_regular: t.right_regular,
            };
            let pair = fundamental_pair(&spec, &mu, &norm, &grid, &opts)?;
            let mut csv = Csv::new(
                prec,
                "solve pair",
                &["x", "s", "psi", "psi_ds_minus", "psi_ds_plus", "phi", "phi_ds_minus", "phi_ds_plus"],
            );
            for (i, &x) in pair.psi.grid().iter().enumerate() {
                let (pl, pr) = node_slopes(&pair.psi, i);
                let (ql, qr) = node_slopes(&pair.phi, i);
                csv.row(&[x, spec.s(x), pair.psi.values()[i], pl, pr, pair.phi.values()[i], ql, qr]);
            }
            let _ = writeln!(out, "left endpoint {}: {}", endpoint_label(&spec, Side::Left), pair.left.kind);
            let _ = writeln!(out, "right endpoint {}: {}", endpoint_label(&spec, Side::Right), pair.right.kind);
            let _ = writeln!(out, "ψ data: a = {}, κ = {}", pair.psi_eq.a, pair.psi_eq.kappa);
            let _ = writeln!(out, "φ data: a = {}, κ = {}", pair.phi_eq.a, pair.phi_eq.kappa);
            let _ = writeln!(out, "linear independence: {:.6e}", pair.independence());
            let triples = interior_triple(&spec, &grid);
            for (name, g) in [("ψ", &pair.psi), ("φ", &pair.phi)] {
                let rep = verify_pair(g, &spec, &mu, &triples, None)?;
                let _ = writeln!(out, "{name} exit-identity residual: {:.3e}", rep.max_residual);
            }
            emit(common, Some(csv.finish()), &out)
        }
    }
}

fn run_decompose(cfg: &Config, common: &Common) -> Result<()> {
    let t = cfg.decompose.as_ref().ok_or_else(|| missing("decompose"))?;
    let spec = cfg.spec()?;
    let g = GridFunction::from_expr(t.grid.points()?, spec.scale().clone(), &t.g)?;
    let d = choquet_decompose(&g, &spec)?;
    let mut worst: f64 = 0.0;
    for (x, v) in g.grid().iter().zip(g.values()) {
        worst = worst.max((choquet_reconstruct(&d, &spec, *x)? - v).abs());
    }
    let mut csv = Csv::new(cfg.output.precision, "decompose", &["lo", "hi", "measure", "mass", "centroid_s", "atom"]);
    for c in &d.cells {
        let cells = vec![
            csv.num(c.lo),
            csv.num(c.hi),
            if c.increasing_side { "mu1".into() } else { "mu2".into() },
            csv.num(c.mass),
            csv.num(c.centroid_s),
            (c.as_atom as u8).to_string(),
        ];
        csv.raw_row(&cells);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    let _ = writeln!(out, "g = {}", t.g);
    let _ = writeln!(out, "alpha = {}, kappa1 = {}, kappa2 = {}, c* = {}", d.alpha, d.kappa1, d.kappa2, d.cstar);
    let (lo, hi) = (g.grid()[0], g.grid()[g.len() - 1]);
    let _ = writeln!(out, "mass of mu1 = {:.12e}, mass of mu2 = {:.12e}", d.mu1.mass(lo, hi)?, d.mu2.mass(lo, hi)?);
    for (x, w) in d.mu1.atoms().iter().chain(d.mu2.atoms()) {
        let _ = writeln!(out, "atom at {x}: {w:.12e}");
    }
    let _ = writeln!(out, "reconstruction sup error on the grid: {worst:.3e}");
    emit(common, Some(csv.finish()), &out)
}

fn g_from_source(
    src: &GSource,
    cfg: &Config,
    spec: &DiffusionSpec,
    grid: &GridConfig,
    default_measure: Option<&str>,
    common: &Common,
) -> Result<GridFunction> {
    let pts = grid.points()?;
    match (&src.expr, src.solve) {
        (Some(e), None) => GridFunction::from_expr(pts, spec.scale().clone(), e),
        (None, Some(dir)) => {
            let name = src
                .measure
                .as_deref()
                .or(default_measure)
                .ok_or_else(|| Error::Config("a solved g needs a `measure`".into()))?;
            let mu = cfg.measure(name, spec)?;
            let c = src.c.unwrap_or_else(|| spec.interval().reference_point());
            let pair = fundamental_pair(spec, &mu, &PairNormalization::at(c), &pts, &options(None, common))?;
            Ok(match dir {
                Direction::Increasing => pair.psi,
                Direction::Decreasing => pair.phi,
            })
        }
        _ => Err(Error::Config("g needs exactly one of `expr` or `solve`".into())),
    }
}

fn run_transform(cfg: &Config, common: &Common) -> Result<()> {
    let t = cfg.transform.as_ref().ok_or_else(|| missing("transform"))?;
    let spec = cfg.spec()?;
    let g = g_from_source(&t.g, cfg, &spec, &t.grid, None, common)?;
    let tr = transform(&spec, &g, t.anchor)?;
    let mut csv = Csv::new(cfg.output.precision, "transform", &["x", "s", "s_g", "g", "extra_drift"]);
    for (&x, &v) in g.grid().iter().zip(g.values()) {
        if !spec.interval().contains(x) {
            continue;
        }
        csv.row(&[x, spec.s(x), tr.s_g(x), v, extra_drift(&tr, x).unwrap_or(f64::NAN)]);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    let _ = writeln!(out, "Q: {}", tr.spec_q.name);
    let (l, r) = tr.s_g_limits();
    let _ = writeln!(out, "s_g limits: left {l}, right {r}");
    let tt = transience_report(&tr, t.anchor)?;
    let _ = writeln!(
        out,
        "transient: {} (from {}: to the right {:.12}, to the left {:.12})",
        tt.transient, t.anchor, tt.to_right, tt.to_left
    );
    for &(x, y) in &t.hitting {
        let _ = writeln!(out, "Q^{x}(T_{y} < ∞) = {:.15}", q_hitting(&tr, x, y)?);
    }
    for &y in &t.local_time {
        let _ = writeln!(out, "Q^{y}(L^{y}_∞) = {:.15}", q_local_time_mean(&tr, y)?);
    }
    emit(common, Some(csv.finish()), &out)
}

fn verdict(dev: f64, flag: f64) -> &'static str {
    if dev < flag {
        "PASS"
    } else {
        "FLAG"
    }
}

fn surrogate_note(s: bool) -> &'static str {
    if s {
        " [surrogate: truncation reached]"
    } else {
        ""
    }
}

fn check_kind(c: &CheckConfig) -> &'static str {
    match c {
        CheckConfig::Martingale { .. } => "martingale",
        CheckConfig::LastPassage { .. } => "last_passage",
        CheckConfig::Vanishing { .. } => "vanishing",
        CheckConfig::MeasureChange { .. } => "measure_change",
        CheckConfig::Calibration { .. } => "calibration",
    }
}

fn run_verify(cfg: &Config, common: &Common) -> Result<()> {
    let t = cfg.verify.as_ref().ok_or_else(|| missing("verify"))?;
    let spec = cfg.spec()?;
    let mu = cfg.measure(&t.measure, &spec)?;
    let g = g_from_source(&t.g, cfg, &spec, &t.grid, Some(&t.measure), common)?;
    let mut sim = t.sim.clone();
    if let Some(s) = common.seed {
        sim.seed = s;
    }
    let geval = |x: f64| g.eval(x);
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    let _ = writeln!(out, "scenario: {} with μ_A = {}, g = {}, x0 = {}, seed {}", spec.name, mu.label(), g.label, t.x0, sim.seed);
    let mut ensembles: Vec<PathEnsemble> = Vec::new();
    let run_one = |check: &CheckConfig, out: &mut String, ensembles: &mut Vec<PathEnsemble>| -> Result<()> {
        match check {
            CheckConfig::Martingale { a, b, times } => {
                let c = SimConfig { exit: Some((*a, *b)), snapshot_times: times.clone(), ..sim.clone() };
                let ens = simulate_with_pcaf(&spec, t.x0, &c, &mu)?;
                let r = check_iw_martingale(&ens, &geval, *a, *b)?;
                let _ = writeln!(
                    out,
                    "{} martingale on ({a}, {b}): E[g(X_T)e^(-A_T)] = {:.6} ± {:.6} vs g(x0) = {:.6}, max deviation {:.2} SE{}",
                    verdict(r.max_deviation, t.flag_se),
                    r.at_exit.0.mean,
                    r.at_exit.0.se,
                    r.target,
                    r.max_deviation,
                    surrogate_note(r.surrogate)
                );
                ensembles.push(ens);
            }
            CheckConfig::LastPassage { y, z } => {
                let iv = spec.interval();
                let exit = if *z > t.x0 {
                    (if iv.left.is_finite() { iv.left } else { sim.truncation.0 }, *z)
                } else {
                    (*z, if iv.right.is_finite() { iv.right } else { sim.truncation.1 })
                };
                let c = SimConfig { exit: Some(exit), passages: vec![(*y, *z)], ..sim.clone() };
                let ens = simulate(&spec, t.x0, &c)?;
                let r = check_last_passage(&ens, &spec, *y, *z)?;
                let _ = writeln!(
                    out,
                    "{} last passage y = {y}, z = {z}: |s(z)-s(y)|·P = {:.6} ± {:.6} vs {:.6}, {:.2} SE{}",
                    verdict(r.deviation, t.flag_se),
                    r.lhs.mean,
                    r.lhs.se,
                    r.rhs,
                    r.deviation,
                    surrogate_note(r.surrogate)
                );
                ensembles.push(ens);
            }
            CheckConfig::Vanishing { times } => {
                let horizon = times.iter().copied().fold(0.0, f64::max);
                let c = SimConfig { horizon, snapshot_times: times.clone(), exit: None, ..sim.clone() };
                let ens = simulate_with_pcaf(&spec, t.x0, &c, &mu)?;
                let r = check_vanishing(&ens, &geval, &spec);
                let decayed = match (r.horizons.first(), r.horizons.last()) {
                    (Some(f), Some(l)) => l.1 < f.1 || l.2 < f.2,
                    _ => false,
                };
                let tag = match (r.applicable, r.decreasing && decayed) {
                    (false, _) => "N/A ",
                    (true, true) => "PASS",
                    (true, false) => "FLAG",
                };
                let medians: Vec<String> = r.horizons.iter().map(|(t, m, q)| format!("t={t}: {m:.4e}/{q:.4e}")).collect();
                let _ = writeln!(out, "{tag} vanishing median/q90 {} (ratio {:.3e}) {}", medians.join(", "), r.ratio, r.note);
                ensembles.push(ens);
            }
            CheckConfig::MeasureChange { functional, a, b } => {
                let tr = transform(&spec, &g, t.x0)?;
                let mut c = SimConfig { exit: Some((*a, *b)), ..sim.clone() };
                match functional {
                    Functional::HitsBefore { first, second } => c.levels = vec![*first, *second],
                    Functional::AboveAt { t, .. } | Functional::One { t } => c.snapshot_times = vec![*t],
                }
                let r = compare_measure_change(&tr, &mu, t.x0, &c, functional)?;
                let _ = writeln!(
                    out,
                    "{} measure change {:?}: direct {:.6} ± {:.6}, reweighted {:.6} ± {:.6}, {:.2} SE{}",
                    verdict(r.deviation, t.flag_se),
                    functional,
                    r.direct.mean,
                    r.direct.se,
                    r.reweighted.mean,
                    r.reweighted.se,
                    r.deviation,
                    surrogate_note(r.surrogate)
                );
            }
            CheckConfig::Calibration { a, b, y } => {
                let r = calibrate_local_time(&spec, t.x0, *a, *b, *y, &sim)?;
                let _ = writeln!(
                    out,
                    "{} local-time calibration at {y} on ({a}, {b}): {:.6} ± {:.6} vs u = {:.6}, {:.2} SE",
                    verdict(r.deviation, t.flag_se),
                    r.estimate.mean,
                    r.estimate.se,
                    r.target,
                    r.deviation
                );
            }
        }
        Ok(())
    };
    let mut first_error = None;
    for check in &t.checks {
        if let Err(e) = run_one(check, &mut out, &mut ensembles) {
            let _ = writeln!(out, "ERROR {}: {e}", check_kind(check));
            first_error.get_or_insert(e);
        }
    }
    if let Some(prefix) = &cfg.output.paths {
        for (k, ens) in ensembles.iter().enumerate() {
            let path = format!("{prefix}.{k}.csv");
            let body = format!("{VERSION_LINE} paths\n{}", ens.summary_csv());
            fs::write(&path, body).map_err(|e| Error::Config(format!("cannot write {path}: {e}")))?;
        }
    }
    emit(common, None, &out)?;
    first_error.map_or(Ok(()), Err)
}
