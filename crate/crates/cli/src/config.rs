//! Run configuration: TOML schema and its resolution into library types.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use nrtl_ident::model::{linspace, DesignMatrix};
use nrtl_ident::montecarlo::{measurement_scenarios, nrtl_parameter_scenarios, ParameterScenario, RegularizationScenario};
use nrtl_ident::oed::Criterion;
use nrtl_ident::regularization::Thresholds;
use nrtl_ident::sensitivity::{ResponseSpec, ResponseVariable, P_BOUNDS, X1L_BOUNDS};
use nrtl_ident::thermo::{AzeotropeType, Mixture, NrtlParams, PureComponent, NRTL_NAMES};
use nrtl_ident::fixtures;

/// Invalid or unresolvable configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mixture: Vec<MixtureEntry>,
    #[serde(default)]
    pub measurement: Vec<MeasurementEntry>,
    #[serde(default)]
    pub grid: GridSection,
    pub vle: Option<VleSection>,
    pub fit: Option<FitSection>,
    pub oed: Option<OedSection>,
    pub mc: Option<StudySection>,
    pub soed: Option<StudySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureEntry {
    /// built-in mixture label
    pub fixture: Option<String>,
    pub label: Option<String>,
    pub component1: Option<PureComponent>,
    pub component2: Option<PureComponent>,
    pub nrtl: Option<NrtlParams>,
    #[serde(default)]
    pub azeotrope: AzeotropeType,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementEntry {
    pub label: String,
    pub variables: Option<Vec<ResponseVariable>>,
    pub sigma_x1v: Option<f64>,
    pub sigma_t: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x1l_start: f64,
    pub x1l_end: f64,
    pub x1l_points: usize,
    pub pressures: Vec<f64>,
    pub prediction_pressure: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            x1l_start: X1L_BOUNDS.0,
            x1l_end: X1L_BOUNDS.1,
            x1l_points: 20,
            pressures: vec![P_BOUNDS.0, P_BOUNDS.1],
            prediction_pressure: 1e5,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VleSection {
    pub mixture: String,
    pub pressures: Option<Vec<f64>>,
    #[serde(default = "default_vle_points")]
    pub points: usize,
}

fn default_vle_points() -> usize {
    20
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub mixture: String,
    pub measurement: String,
    /// CSV path, relative to the config file
    pub data: PathBuf,
    pub initial: Option<[f64; 5]>,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default = "default_fit_alpha_bounds")]
    pub alpha_bounds: [f64; 2],
    #[serde(default = "default_beta")]
    pub beta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OedSection {
    pub mixture: String,
    pub measurement: String,
    pub theta: Option<[f64; 5]>,
    /// existing experiments as `[x1L, P]` pairs
    pub design: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "one")]
    pub n_new: usize,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// mixture labels; all configured mixtures when absent
    pub mixtures: Option<Vec<String>>,
    /// measurement labels; all configured measurements when absent
    pub measurements: Option<Vec<String>>,
    /// parameter scenario labels, or `"standard"` for the sixteen-scenario set
    #[serde(default = "default_parameters")]
    pub parameters: Vec<String>,
    #[serde(default = "default_regularization")]
    pub regularization: Vec<String>,
    pub n_mc: usize,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    pub alpha_bounds: Option<[f64; 2]>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// sOED-PE only
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
}

fn default_fit_alpha_bounds() -> [f64; 2] {
    [0.0, 2.0]
}
fn default_beta() -> f64 {
    0.95
}
fn one() -> usize {
    1
}
fn default_starts() -> usize {
    21
}
fn default_parameters() -> Vec<String> {
    vec!["All".into()]
}
fn default_regularization() -> Vec<String> {
    vec!["None".into()]
}
fn default_noise_scale() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    15
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| bad(format!("invalid config {}: {}", path.display(), e.message())))
    }

    pub fn mixtures(&self) -> Result<Vec<Mixture>, ConfigError> {
        let mut out: Vec<Mixture> = Vec::new();
        for (i, e) in self.mixture.iter().enumerate() {
            let m = match &e.fixture {
                Some(name) => {
                    let mut m = fixtures::by_label(name).ok_or_else(|| bad(format!("unknown fixture mixture '{name}'")))?;
                    if let Some(l) = &e.label {
                        m.label = l.clone();
                    }
                    if let Some(p) = e.nrtl {
                        m.nrtl = p;
                    }
                    m
                }
                None => {
                    let missing = |what: &str| bad(format!("mixture entry {}: missing {what}", i + 1));
                    Mixture::new(
                        e.label.as_deref().ok_or_else(|| missing("label"))?,
                        e.component1.clone().ok_or_else(|| missing("component1"))?,
                        e.component2.clone().ok_or_else(|| missing("component2"))?,
                        e.nrtl.ok_or_else(|| missing("nrtl"))?,
                        e.azeotrope,
                    )
                    .map_err(|err| bad(err.to_string()))?
                }
            };
            m.validate().map_err(|err| bad(err.to_string()))?;
            if out.iter().any(|o| o.label == m.label) {
                return Err(bad(format!("duplicate mixture label '{}'", m.label)));
            }
            out.push(m);
        }
        if out.is_empty() {
            out = fixtures::all();
        }
        Ok(out)
    }

    pub fn measurements(&self) -> Result<Vec<(String, ResponseSpec)>, ConfigError> {
        let builtin = measurement_scenarios();
        if self.measurement.is_empty() {
            return Ok(builtin.into_iter().map(|(l, s)| (l.to_string(), s)).collect());
        }
        let mut out: Vec<(String, ResponseSpec)> = Vec::new();
        for e in &self.measurement {
            let spec = match (&e.variables, builtin.iter().find(|(l, _)| *l == e.label)) {
                (None, Some((_, s))) if e.sigma_x1v.is_none() && e.sigma_t.is_none() => s.clone(),
                (Some(v), _) => ResponseSpec::new(v.clone(), e.sigma_x1v.unwrap_or(1e-3), e.sigma_t.unwrap_or(0.03))
                    .map_err(|err| bad(format!("measurement '{}': {err}", e.label)))?,
                _ => return Err(bad(format!("measurement '{}': variables required", e.label))),
            };
            if out.iter().any(|(l, _)| *l == e.label) {
                return Err(bad(format!("duplicate measurement label '{}'", e.label)));
            }
            out.push((e.label.clone(), spec));
        }
        Ok(out)
    }

    pub fn grids(&self) -> Result<(DesignMatrix, DesignMatrix), ConfigError> {
        let g = &self.grid;
        if g.x1l_points == 0 || g.pressures.is_empty() {
            return Err(bad("grid: at least one composition and one pressure required"));
        }
        let x = linspace(g.x1l_start, g.x1l_end, g.x1l_points);
        let mut measurement = DesignMatrix::empty(2);
        for &p in &g.pressures {
            for &xi in &x {
                measurement.push(&[xi, p]);
            }
        }
        let mut prediction = DesignMatrix::empty(2);
        for &xi in &x {
            prediction.push(&[xi, g.prediction_pressure]);
        }
        let bounds = [X1L_BOUNDS, P_BOUNDS];
        measurement
            .check_bounds(&bounds)
            .and_then(|_| prediction.check_bounds(&bounds))
            .map_err(|e| bad(format!("grid: {e}")))?;
        Ok((measurement, prediction))
    }
}

pub fn find_mixture<'a>(mixtures: &'a [Mixture], label: &str) -> Result<&'a Mixture, ConfigError> {
    mixtures
        .iter()
        .find(|m| m.label == label)
        .ok_or_else(|| bad(format!("unknown mixture '{label}'")))
}

pub fn find_measurement<'a>(m: &'a [(String, ResponseSpec)], label: &str) -> Result<&'a ResponseSpec, ConfigError> {
    m.iter()
        .find(|(l, _)| l == label)
        .map(|(_, s)| s)
        .ok_or_else(|| bad(format!("unknown measurement '{label}'")))
}

pub fn param_names() -> Vec<String> {
    NRTL_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn param_indices(names: &[String]) -> Result<Vec<usize>, ConfigError> {
    names
        .iter()
        .map(|n| {
            NRTL_NAMES
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| bad(format!("unknown parameter '{n}'")))
        })
        .collect()
}

pub fn parameter_scenarios(labels: &[String]) -> Result<Vec<ParameterScenario>, ConfigError> {
    let names = param_names();
    let mut out = Vec::new();
    for l in labels {
        if l == "standard" {
            out.extend(nrtl_parameter_scenarios());
        } else {
            out.push(ParameterScenario::from_label(l, &names).ok_or_else(|| bad(format!("unknown parameter scenario '{l}'")))?);
        }
    }
    Ok(out)
}

pub fn regularization_scenarios(labels: &[String]) -> Result<Vec<RegularizationScenario>, ConfigError> {
    labels
        .iter()
        .map(|l| RegularizationScenario::from_label(l).ok_or_else(|| bad(format!("unknown regularization scenario '{l}'"))))
        .collect()
}

pub fn check_alpha_bounds(b: [f64; 2]) -> Result<(f64, f64), ConfigError> {
    if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
        return Err(bad("alpha_bounds must be an ordered finite pair"));
    }
    Ok((b[0], b[1]))
}

pub fn check_design(rows: &[[f64; 2]]) -> Result<DesignMatrix, ConfigError> {
    let d = DesignMatrix::from_rows(rows);
    d.check_bounds(&[X1L_BOUNDS, P_BOUNDS]).map_err(|e| bad(format!("design: {e}")))?;
    Ok(d)
}
