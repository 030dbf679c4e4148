//! TOML run configuration: a diffusion, named measures and task blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::uniform_grid;
use crate::ito_watanabe::{Direction, Method, Start};
use crate::measure::{
    BoundaryIntegral, Density, Interval, OverrideVerdict, RadonMeasure, Side, VerdictOverride,
};
use crate::montecarlo::{Functional, SimConfig};
use crate::scale::ScaleFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub diffusion: DiffusionConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub measures: BTreeMap<String, MeasureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifyTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyTask>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Either a catalog example or an explicit `(interval, scale, speed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    /// `s(x)`; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_inverse: Option<Expr>,
    /// Density of `m` in `y`; `2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideConfig {
    pub side: Side,
    pub integral: BoundaryIntegral,
    pub verdict: OverrideVerdict,
}

/// `density dy + Σ mass·δ_location`, or the measure of a catalog example.
/// Neither part gives the zero measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<(f64, f64)>,
    /// `(location, mass)` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<OverrideConfig>,
}

/// `points`, or `n` equally spaced points on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<f64>,
}

impl GridConfig {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !self.points.is_empty() {
            return Ok(self.points.clone());
        }
        match (self.lo, self.hi, self.n) {
            (Some(lo), Some(hi), Some(n)) if lo < hi && n >= 2 && lo.is_finite() && hi.is_finite() => {
                Ok(uniform_grid(lo, hi, n))
            }
            _ => Err(Error::Config("grid needs `points`, or finite `lo < hi` and `n ≥ 2`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTask {
    pub measure: String,
    /// Reference points `b`; the interval's reference point when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveTask {
    pub measure: String,
    pub grid: GridConfig,
    /// `increasing`, `decreasing`, or absent for the fundamental pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub kappa: f64,
    /// Normalization point and value for A-natural boundaries and pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// `(a, κ)` for an A-regular left endpoint when solving a pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_regular: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_regular: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Start>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeTask {
    pub g: Expr,
    pub grid: GridConfig,
}

/// Where `g` comes from: an expression, or `psi` / `phi` solved for a
/// measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<String>,
    /// Normalization point for solved sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformTask {
    pub g: GSource,
    pub grid: GridConfig,
    pub anchor: f64,
    /// Pairs `(x, y)` for which `Q^x(T_y < ∞)` is reported.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hitting: Vec<(f64, f64)>,
    /// Levels at which the mean total local time under `Q` is reported.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local_time: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckConfig {
    Martingale { a: f64, b: f64, #[serde(default)] times: Vec<f64> },
    LastPassage { y: f64, z: f64 },
    Vanishing { times: Vec<f64> },
    MeasureChange { functional: Functional, a: f64, b: f64 },
    Calibration { a: f64, b: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTask {
    pub measure: String,
    pub g: GSource,
    pub grid: GridConfig,
    pub x0: f64,
    #[serde(default)]
    pub sim: SimConfig,
    /// Deviation in standard errors above which a check is flagged.
    #[serde(default = "default_flag_se")]
    pub flag_se: f64,
    pub checks: Vec<CheckConfig>,
}

fn default_flag_se() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Significant digits in CSV output.
    #[serde(default = "default_precision")]
    pub precision: usize,
    /// Where per-path summaries of `verify` runs go, if anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<String>,
}

fn default_precision() -> usize {
    17
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { precision: 17, paths: None }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Config {
    pub fn parse(src: &str) -> Result<Config> {
        toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            Error::Parse { line, column, message: e.message().to_string() }
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn spec(&self) -> Result<DiffusionSpec> {
        let d = &self.diffusion;
        if let Some(name) = &d.catalog {
            if d.interval.is_some() || d.scale.is_some() || d.speed.is_some() {
                return Err(Error::Config("a catalog diffusion takes no interval, scale or speed".into()));
            }
            return Ok(catalog::by_name(name, d.delta.unwrap_or(0.5))?.spec);
        }
        let (l, r) = d.interval.ok_or_else(|| Error::Config("diffusion needs `catalog` or `interval`".into()))?;
        let iv = Interval::new(l, r)?;
        let scale = match &d.scale {
            None => ScaleFunction::natural(iv),
            Some(e) => ScaleFunction::from_expr(
                iv,
                e.source(),
                d.scale_inverse.as_ref().map(|e| e.source()),
                None,
                None,
            )?,
        };
        let speed = match &d.speed {
            None => RadonMeasure::lebesgue(iv, 2.0).with_label("2 dy"),
            Some(e) => RadonMeasure::with_density(iv, Density::from_expr(e.clone())),
        };
        let name = match (&d.scale, &d.speed) {
            (None, None) => "bm".to_string(),
            _ => format!("s = {}, m = {}", scale.describe(), speed.label()),
        };
        DiffusionSpec::new(name, scale, speed)
    }

    pub fn measure(&self, name: &str, spec: &DiffusionSpec) -> Result<RadonMeasure> {
        let m = self.measures.get(name).ok_or_else(|| {
            Error::Config(format!(
                "measure '{name}' is not defined (known: {})",
                self.measures.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let iv = spec.interval();
        if let Some(c) = &m.catalog {
            if m.density.is_some() || !m.atoms.is_empty() {
                return Err(Error::Config(format!("measure '{name}': a catalog measure takes no density or atoms")));
            }
            let ex = catalog::by_name(c, m.delta.unwrap_or(0.5))?;
            if ex.spec.interval() != iv {
                return Err(Error::Config(format!("measure '{name}' lives on a different interval")));
            }
            return Ok(ex.mu);
        }
        let mut mu = match &m.density {
            Some(e) => RadonMeasure::with_density(iv, Density::from_expr(e.clone())),
            None => RadonMeasure::zero(iv),
        };
        if let Some((lo, hi)) = m.support {
            mu = mu.with_support(lo, hi)?;
        }
        for &(x, w) in &m.atoms {
            mu = mu.with_atom(x, w)?;
        }
        for o in &m.overrides {
            mu = mu.with_override(VerdictOverride { side: o.side, integral: o.integral, verdict: o.verdict });
        }
        Ok(mu)
    }
}

/// A ready-to-run configuration for a catalog example.
pub fn example_config(name: &str, delta: f64) -> Result<Config> {
    let ex = catalog::by_name(name, delta)?;
    let iv = ex.spec.interval();
    let (lo, hi) = match (iv.left.is_finite(), iv.right.is_finite()) {
        (true, false) => (iv.left + 0.1, iv.left + 10.0),
        _ => (-5.0, 5.0),
    };
    let delta_field = (name == "delta").then_some(delta);
    let mut measures = BTreeMap::new();
    measures.insert("A".to_string(), MeasureConfig { catalog: Some(name.into()), delta: delta_field, ..Default::default() });
    Ok(Config {
        diffusion: DiffusionConfig { catalog: Some(name.into()), delta: delta_field, ..Default::default() },
        measures,
        classify: Some(ClassifyTask { measure: "A".into(), b: vec![] }),
        solve: Some(SolveTask {
            measure: "A".into(),
            grid: GridConfig { lo: Some(lo), hi: Some(hi), n: Some(101), points: vec![] },
            direction: None,
            a: 0.0,
            kappa: 0.0,
            c: Some(ex.reference),
            alpha: Some(1.0),
            left_regular: None,
            right_regular: None,
            method: None,
            start: None,
            tol: None,
        }),
        decompose: None,
        transform: None,
        verify: None,
        output: OutputConfig::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = r#"
[diffusion]
interval = [0.0, inf]

[measures.A]
density = "2/y^2"

[classify]
measure = "A"
b = [1.0, 2.0]
"#;

    #[test]
    fn parses_and_builds() {
        let c = Config::parse(SRC).unwrap();
        let spec = c.spec().unwrap();
        assert_eq!(spec.interval().right, f64::INFINITY);
        let mu = c.measure("A", &spec).unwrap();
        assert!((mu.density_at(2.0) - 0.5).abs() < 1e-15);
        assert!(c.measure("B", &spec).is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config::parse(SRC).unwrap();
        let again = Config::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        let ex = example_config("delta", 0.25).unwrap();
        assert_eq!(Config::parse(&ex.to_toml().unwrap()).unwrap(), ex);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Config::parse("[diffusion]\ninterval = [0.0, 1.0]\nbogus = 3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let err = Config::parse("[diffusion]\nscale = \"x +\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_measure_is_zero() {
        let c = Config::parse("[diffusion]\ninterval = [-inf, inf]\n[measures.Z]\n").unwrap();
        let spec = c.spec().unwrap();
        assert!(!c.measure("Z", &spec).unwrap().has_mass());
    }
}
