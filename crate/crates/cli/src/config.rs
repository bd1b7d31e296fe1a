//! Scenario files: TOML with the sections `[grid]`, `[coefficients]`,
//! `[initial]`, `[boundary]`, `[solver]`, `[analysis]`, `[output]` and,
//! for option pricing, `[finance]` in place of the first four.
//!
//! Unknown keys are rejected. Coefficients and data accept a number or a
//! quoted expression in `x` and `t`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use obstacle_core::closed_forms::ClosedForm;
use obstacle_core::coefficients::CoefficientSet;
use obstacle_core::expr::{parse_expression, Expr};
use obstacle_core::finance::{PutAnalysis, PutScenario, Volatility};
use obstacle_core::grid::{GridSpec, Point};
use obstacle_core::lcp::SolveConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{location}: {message}")]
pub struct ConfigError {
    /// `[section] key` or the file name for syntax errors.
    pub location: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(location: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { location: location.into(), message: message.to_string() }
    }
}

/// A number or an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    pub fn to_expr(&self, location: &str) -> Result<Expr, ConfigError> {
        match self {
            Value::Number(v) => Ok(Expr::constant(*v)),
            Value::Text(s) => parse_expression(s).map_err(|e| ConfigError::new(location, e)),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finance: Option<FinanceSection>,
    /// Written by `run`; ignored on input so a manifest can be re-run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub nt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub a: Value,
    #[serde(default = "zero")]
    pub b: Value,
    #[serde(default = "zero")]
    pub c: Value,
    pub f: Value,
    pub delta: f64,
}

fn zero() -> Value {
    Value::Number(0.0)
}

/// Initial data: an expression (evaluated at `t = t_min`) or a closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Value>,
    /// `v_plus`, `v_minus`, `counterexample` or `v_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub theta: f64,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self { theta: d.theta, omega: d.omega, tol: d.tol, max_iter: d.max_iter }
    }
}

impl SolverSection {
    pub fn to_config(&self) -> Result<SolveConfig, ConfigError> {
        let cfg = SolveConfig { theta: self.theta, omega: self.omega, tol: self.tol, max_iter: self.max_iter };
        cfg.check().map_err(|e| ConfigError::new("[solver]", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Zero threshold for free-boundary extraction; default `0.25 (δ / max a) h²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup: Option<BlowupSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_fit: Option<SmoothFitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portrait: Option<PortraitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub points: Vec<[f64; 2]>,
    /// Negative offsets; default is the automatic ladder around each point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub phi_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupSection {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Reference box `[-x_half, x_half] x [t_min, t_max]`.
    #[serde(default = "one")]
    pub x_half: f64,
    #[serde(default = "default_ref_n")]
    pub nx: usize,
    #[serde(default = "minus_one")]
    pub t_min: f64,
    #[serde(default)]
    pub t_max: f64,
    #[serde(default = "default_ref_nt")]
    pub nt: usize,
    /// Freeze the coefficients at the point before rescaling.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Snap each point to the nearest extracted boundary point.
    #[serde(default = "yes")]
    pub snap: bool,
}

fn default_eps() -> Vec<f64> {
    vec![0.4, 0.2, 0.1]
}
fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn default_ref_n() -> usize {
    201
}
fn default_ref_nt() -> usize {
    101
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "yes")]
    pub snap: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default = "default_phi_tol")]
    pub phi_tol: f64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_ladder_len")]
    pub ladder_len: usize,
}

fn default_phi_tol() -> f64 {
    1e-4
}
fn default_tail_tol() -> f64 {
    1e-3
}
fn default_ladder_len() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothFitSection {
    #[serde(default = "default_multiples")]
    pub radius_multiples: Vec<f64>,
    #[serde(default = "default_ut_tol")]
    pub ut_tol: f64,
}

fn default_multiples() -> Vec<f64> {
    vec![4.0, 2.0, 1.0]
}
fn default_ut_tol() -> f64 {
    1e-6
}

/// Closed-form family sampled on its own box, one field file per member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitSection {
    /// Representative of `v_m` with `-1 < m < 0`.
    #[serde(default = "default_portrait_m")]
    pub m: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub nt: usize,
    /// Profile tables `xi,V,Vp` written for these `m`.
    #[serde(default)]
    pub profiles: Vec<f64>,
}

fn default_portrait_m() -> f64 {
    -0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Sub-directory of the output root; default is the config file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "yes")]
    pub write_field: bool,
    #[serde(default = "yes")]
    pub write_gamma: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { name: None, write_field: true, write_gamma: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinanceSection {
    pub strike: f64,
    pub rate: f64,
    /// Constant volatility or an expression in `x` (log-price) and `t`
    /// (time to maturity).
    pub sigma: Value,
    pub maturity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_ref_factor")]
    pub reference_factor: usize,
    pub nx: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_multiples")]
    pub radius_multiples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long: Option<LongMaturitySection>,
}

fn default_margin() -> f64 {
    0.02
}
fn default_ref_factor() -> usize {
    2
}
fn default_window() -> f64 {
    0.1
}

/// Second solve at a long maturity for the perpetual comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongMaturitySection {
    pub maturity: f64,
    pub nx: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    /// Allowed relative distance to the perpetual level.
    #[serde(default = "default_perpetual_tol")]
    pub tol: f64,
}

fn default_perpetual_tol() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSection {
    pub version: String,
    pub source: String,
    pub outputs: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
}

/// Initial and boundary data ready for the solver.
#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Expressions { initial: Expr, left: Expr, right: Expr },
    ClosedForm(ClosedForm),
}

/// A validated obstacle-problem scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeScenario {
    pub grid: GridSpec,
    pub coeffs: CoefficientSet,
    pub data: Data,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinanceScenario {
    pub scenario: PutScenario,
    pub analysis: PutAnalysis,
    pub long: Option<(PutScenario, PutAnalysis, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Pde(PdeScenario),
    Finance(FinanceScenario),
}

impl ScenarioConfig {
    pub fn from_toml(src: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError::new(origin, e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::from_toml(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    /// Checks every section and builds the core objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.solver.to_config()?;
        self.check_analysis()?;
        match &self.finance {
            Some(fin) => {
                for (name, present) in [
                    ("[grid]", self.grid.is_some()),
                    ("[coefficients]", self.coefficients.is_some()),
                    ("[initial]", self.initial.is_some()),
                    ("[boundary]", self.boundary.is_some()),
                ] {
                    if present {
                        return Err(ConfigError::new(name, "not allowed together with [finance]"));
                    }
                }
                if self.analysis != AnalysisSection::default() {
                    return Err(ConfigError::new(
                        "[analysis]",
                        "finance scenarios take their analysis options from [finance]",
                    ));
                }
                Ok(Resolved::Finance(resolve_finance(fin)?))
            }
            None => Ok(Resolved::Pde(self.resolve_pde()?)),
        }
    }

    fn resolve_pde(&self) -> Result<PdeScenario, ConfigError> {
        let g = self.grid.as_ref().ok_or_else(|| ConfigError::new("[grid]", "missing section"))?;
        let grid =
            GridSpec::new(g.x_min, g.x_max, g.nx, g.t_min, g.t_max, g.nt).map_err(|e| ConfigError::new("[grid]", e))?;
        let c = self.coefficients.as_ref().ok_or_else(|| ConfigError::new("[coefficients]", "missing section"))?;
        let coeffs = CoefficientSet::new(
            c.a.to_expr("[coefficients] a")?,
            c.b.to_expr("[coefficients] b")?,
            c.c.to_expr("[coefficients] c")?,
            c.f.to_expr("[coefficients] f")?,
            c.delta,
        )
        .map_err(|e| ConfigError::new("[coefficients] delta", e))?;
        let init = self.initial.as_ref().ok_or_else(|| ConfigError::new("[initial]", "missing section"))?;
        let data = match (&init.u, &init.closed_form) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new("[initial]", "give either `u` or `closed_form`, not both"))
            }
            (None, None) => return Err(ConfigError::new("[initial]", "needs `u` or `closed_form`")),
            (None, Some(name)) => {
                let form = closed_form(name, init.m, "[initial] closed_form")?;
                if let Some(b) = &self.boundary {
                    if b.left.is_some() || b.right.is_some() {
                        return Err(ConfigError::new(
                            "[boundary]",
                            "closed-form data fixes the boundary; remove `left`/`right`",
                        ));
                    }
                    if let Some(bn) = &b.closed_form {
                        if closed_form(bn, b.m, "[boundary] closed_form")? != form {
                            return Err(ConfigError::new("[boundary] closed_form", "must match [initial] closed_form"));
                        }
                    }
                }
                Data::ClosedForm(form)
            }
            (Some(u), None) => {
                if init.m.is_some() {
                    return Err(ConfigError::new("[initial] m", "only used with `closed_form`"));
                }
                let b = self
                    .boundary
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("[boundary]", "missing section (needed with expression data)"))?;
                if b.closed_form.is_some() || b.m.is_some() {
                    return Err(ConfigError::new(
                        "[boundary] closed_form",
                        "only allowed with closed-form initial data",
                    ));
                }
                let left = b.left.as_ref().ok_or_else(|| ConfigError::new("[boundary] left", "missing key"))?;
                let right = b.right.as_ref().ok_or_else(|| ConfigError::new("[boundary] right", "missing key"))?;
                Data::Expressions {
                    initial: u.to_expr("[initial] u")?,
                    left: left.to_expr("[boundary] left")?,
                    right: right.to_expr("[boundary] right")?,
                }
            }
        };
        Ok(PdeScenario { grid, coeffs, data })
    }

    fn check_analysis(&self) -> Result<(), ConfigError> {
        let a = &self.analysis;
        if let Some(z) = a.zero_tol {
            if !(z.is_finite() && z >= 0.0) {
                return Err(ConfigError::new("[analysis] zero_tol", "must be finite and non-negative"));
            }
        }
        if let Some(e) = &a.energy {
            if let Some(ts) = &e.times {
                if ts.iter().any(|t| !(*t < 0.0)) {
                    return Err(ConfigError::new("[analysis.energy] times", "offsets must be negative"));
                }
            }
            if e.phi_m.iter().any(|m| !(-1.0..=0.0).contains(m)) {
                return Err(ConfigError::new("[analysis.energy] phi_m", "values must lie in [-1, 0]"));
            }
        }
        if let Some(b) = &a.blowup {
            if b.eps.is_empty() || b.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(ConfigError::new("[analysis.blowup] eps", "needs positive scales"));
            }
            if !(b.x_half > 0.0) || !(b.t_min <= -1.0) || !(b.t_max >= b.t_min) {
                return Err(ConfigError::new(
                    "[analysis.blowup]",
                    "reference box must satisfy x_half > 0 and t_min <= -1 <= t_max",
                ));
            }
            GridSpec::new(-b.x_half, b.x_half, b.nx, b.t_min, b.t_max, b.nt)
                .map_err(|e| ConfigError::new("[analysis.blowup]", e))?;
        }
        if let Some(c) = &a.classify {
            if c.ladder_len < 3 {
                return Err(ConfigError::new("[analysis.classify] ladder_len", "must be at least 3"));
            }
            if let Some(l) = &c.t_ladder {
                if l.iter().any(|t| !(*t < 0.0)) {
                    return Err(ConfigError::new("[analysis.classify] t_ladder", "offsets must be negative"));
                }
            }
        }
        if let Some(s) = &a.smooth_fit {
            if s.radius_multiples.is_empty() || s.radius_multiples.iter().any(|k| !(*k >= 1.0)) {
                return Err(ConfigError::new("[analysis.smooth_fit] radius_multiples", "multiples must be >= 1"));
            }
        }
        if let Some(p) = &a.portrait {
            if !(p.m > -1.0 && p.m < 0.0) {
                return Err(ConfigError::new("[analysis.portrait] m", "must lie in (-1, 0)"));
            }
            if p.profiles.iter().any(|m| !(*m > -1.0 && *m <= 0.0)) {
                return Err(ConfigError::new("[analysis.portrait] profiles", "values must lie in (-1, 0]"));
            }
            GridSpec::new(p.x_min, p.x_max, p.nx, p.t_min, p.t_max, p.nt)
                .map_err(|e| ConfigError::new("[analysis.portrait]", e))?;
        }
        Ok(())
    }
}

pub fn closed_form(name: &str, m: Option<f64>, location: &str) -> Result<ClosedForm, ConfigError> {
    let no_m = |form: ClosedForm| match m {
        Some(_) => Err(ConfigError::new(location, "`m` is only used with v_m")),
        None => Ok(form),
    };
    match name {
        "v_plus" => no_m(ClosedForm::v_plus()),
        "v_minus" => no_m(ClosedForm::v_minus()),
        "counterexample" => no_m(ClosedForm::counterexample()),
        "v_m" => {
            let m = m.ok_or_else(|| ConfigError::new(location, "v_m needs `m`"))?;
            ClosedForm::v_m(m).map_err(|e| ConfigError::new(location, e))
        }
        other => Err(ConfigError::new(
            location,
            format!("unknown closed form `{other}` (expected v_plus, v_minus, v_m or counterexample)"),
        )),
    }
}

fn resolve_finance(fin: &FinanceSection) -> Result<FinanceScenario, ConfigError> {
    let volatility = match &fin.sigma {
        Value::Number(s) => Volatility::Constant(*s),
        Value::Text(_) => {
            let e = fin.sigma.to_expr("[finance] sigma")?;
            if e.is_constant() {
                Volatility::Constant(e.eval(0.0, 0.0))
            } else {
                Volatility::Local(e)
            }
        }
    };
    let mut scenario = PutScenario::new(fin.strike, fin.rate, 1.0, fin.maturity);
    scenario.volatility = volatility;
    if let Some(y) = fin.y_min {
        scenario.y_min = y;
    }
    scenario.margin = fin.margin;
    scenario.reference_factor = fin.reference_factor;
    let analysis =
        PutAnalysis { nx: fin.nx, nt: fin.nt, radius_multiples: fin.radius_multiples.clone(), window: fin.window };
    if fin.nx < 5 {
        return Err(ConfigError::new("[finance] nx", "needs at least 5 nodes"));
    }
    let long = match &fin.long {
        Some(l) => {
            if !(l.maturity > 0.0) || l.nx < 5 || !(l.tol > 0.0) {
                return Err(ConfigError::new("[finance.long]", "needs maturity > 0, nx >= 5 and tol > 0"));
            }
            let mut s = scenario.clone();
            s.maturity = l.maturity;
            let a = PutAnalysis { nx: l.nx, nt: l.nt, ..analysis.clone() };
            Some((s, a, l.tol))
        }
        None => None,
    };
    Ok(FinanceScenario { scenario, analysis, long })
}

/// `(x, t)` pairs of a point list.
pub fn points(list: &[[f64; 2]]) -> Vec<Point> {
    list.iter().map(|p| Point::new(p[0], p[1])).collect()
}
