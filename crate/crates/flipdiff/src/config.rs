//! Experiment configuration: a JSON document with an embedded schema version,
//! `key=value` overrides on dotted paths, and field-level validation.

use std::fmt;
use std::path::Path;

use flipdiff_core::lattice::{validate_hopping, HoppingKernel, PeriodicPotential};
use flipdiff_core::simulate::Model;
use flipdiff_core::spectral::SpectralConfig;
use flipdiff_core::C64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// One diagnostic, addressed by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("configuration is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid configuration:{}", list(.0))]
    Invalid(Vec<FieldError>),
}

fn list(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("\n  {e}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelBlock,
    pub noise: NoiseBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub dim: usize,
    pub hopping: Vec<HoppingEntry>,
    pub potential: PotentialBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoppingEntry {
    pub offset: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialBlock {
    Periodic { period: Vec<usize>, values: Vec<f64> },
    AlmostMathieu { coupling: f64, phase: f64, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub rate: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_ladder: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Box,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    /// Box radius `L` of the augmented truncation.
    pub radius: usize,
    /// Walsh order cap `K`.
    pub order: usize,
    pub mode: BoundaryMode,
    /// Sites per axis in torus mode.
    pub torus: Vec<usize>,
    pub solve_tol: f64,
    pub eigen_tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub arnoldi_steps: usize,
    /// Adds rows at `(L + 2, K)` and `(L, K + 1)` to spectral output.
    pub refine: bool,
    pub integrator_tol: f64,
    /// Oracle tolerances for the fiber and Walsh comparisons.
    pub fourier_tol: f64,
    pub walsh_tol: f64,
    pub quadrature_tol: f64,
    pub propagation_tol: f64,
    pub eta_ladder: Vec<f64>,
    pub eta_sites_per_inverse: f64,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        let s = SpectralConfig::default();
        Self {
            radius: 10,
            order: 3,
            mode: BoundaryMode::Box,
            torus: Vec::new(),
            solve_tol: s.solve_tol,
            eigen_tol: s.eigen_tol,
            inner_tol: s.inner_tol,
            max_iter: s.max_iter,
            restart: s.restart,
            arnoldi_steps: s.arnoldi_steps,
            refine: false,
            integrator_tol: 1e-12,
            fourier_tol: 1e-8,
            walsh_tol: 1e-12,
            quadrature_tol: 1e-8,
            propagation_tol: 1e-13,
            eta_ladder: vec![0.4, 0.2, 0.1],
            eta_sites_per_inverse: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Amplitude {
    pub site: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub horizon: f64,
    /// Regular sampling step; explicit `sample_times` take precedence.
    pub sample_step: f64,
    pub sample_times: Vec<f64>,
    pub trajectories: usize,
    pub seed: u64,
    pub blocks: usize,
    pub fit_window: [f64; 2],
    pub clt_times: Vec<f64>,
    /// Unscaled wave vectors of the characteristic function; empty selects
    /// 25 points on `[−3, 3]` along each axis.
    pub clt_k: Vec<Vec<f64>>,
    /// Empty means `δ₀`.
    pub initial: Vec<Amplitude>,
    pub oracle_times: Vec<f64>,
    pub sigma_bound: f64,
    pub relaxation_times: Vec<f64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            sample_step: 1.0,
            sample_times: Vec::new(),
            trajectories: 1000,
            seed: 1,
            blocks: 100,
            fit_window: [20.0, 40.0],
            clt_times: vec![10.0, 20.0, 40.0],
            clt_k: Vec::new(),
            initial: Vec::new(),
            oracle_times: vec![0.5, 1.0, 2.0],
            sigma_bound: 3.0,
            relaxation_times: vec![25.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: String::from("out"), formats: vec![String::from("csv"), String::from("json")] }
    }
}

/// Sets `path` (dotted, array indices allowed) in a JSON document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), FieldError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| FieldError::new(assignment, "override must have the form key=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(FieldError::new(assignment, "override key is empty"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), value);
                    return Ok(());
                }
                map.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| FieldError::new(path, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| FieldError::new(path, format!("index {idx} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(FieldError::new(path, format!("`{part}` is below a scalar"))),
        };
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: Value = serde_json::from_str(text)?;
        let errs: Vec<FieldError> = overrides.iter().filter_map(|o| apply_override(&mut doc, o).err()).collect();
        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let cfg: Self = serde_path_to_error::deserialize(doc).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Invalid(vec![FieldError::new(field, e.into_inner().to_string())])
        })?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Structural and numerical checks shared by every subcommand.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            e.push(FieldError::new("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        let d = self.model.dim;
        if d == 0 {
            e.push(FieldError::new("model.dim", "must be at least 1"));
        }
        for (i, h) in self.model.hopping.iter().enumerate() {
            if h.offset.len() != d {
                e.push(FieldError::new(format!("model.hopping.{i}.offset"), format!("has {} components, dim is {d}", h.offset.len())));
            }
            if !h.re.is_finite() || !h.im.is_finite() {
                e.push(FieldError::new(format!("model.hopping.{i}"), "value must be finite"));
            }
        }
        if e.is_empty() {
            if let Err(err) = validate_hopping(&self.hopping()) {
                e.push(FieldError::new("model.hopping", err.to_string()));
            }
        }
        match &self.model.potential {
            PotentialBlock::Periodic { period, values } => {
                if period.len() != d {
                    e.push(FieldError::new("model.potential.period", format!("has {} components, dim is {d}", period.len())));
                } else if let Err(err) = PeriodicPotential::new(period.clone(), values.clone()) {
                    e.push(FieldError::new("model.potential", err.to_string()));
                }
            }
            PotentialBlock::AlmostMathieu { coupling, phase, frequency } => {
                if d != 1 {
                    e.push(FieldError::new("model.potential", "the almost-Mathieu potential is one-dimensional"));
                }
                if ![coupling, phase, frequency].iter().all(|v| v.is_finite()) {
                    e.push(FieldError::new("model.potential", "parameters must be finite"));
                }
            }
        }
        if !(self.noise.rate > 0.0 && self.noise.rate.is_finite()) {
            e.push(FieldError::new("noise.rate", "must be positive"));
        }
        if let Some(l) = self.noise.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                e.push(FieldError::new("noise.lambda", "must be finite and nonnegative"));
            }
        }
        for (i, l) in self.noise.lambda_ladder.iter().enumerate() {
            if !(*l > 0.0 && l.is_finite()) {
                e.push(FieldError::new(format!("noise.lambda_ladder.{i}"), "must be positive"));
            }
        }
        let n = &self.numerics;
        if n.mode == BoundaryMode::Torus && n.torus.len() != d {
            e.push(FieldError::new("numerics.torus", format!("torus mode needs {d} sizes")));
        }
        for (name, v) in [
            ("solve_tol", n.solve_tol),
            ("eigen_tol", n.eigen_tol),
            ("inner_tol", n.inner_tol),
            ("integrator_tol", n.integrator_tol),
            ("quadrature_tol", n.quadrature_tol),
            ("propagation_tol", n.propagation_tol),
            ("eta_sites_per_inverse", n.eta_sites_per_inverse),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                e.push(FieldError::new(format!("numerics.{name}"), "must be positive"));
            }
        }
        let r = &self.run;
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            e.push(FieldError::new("run.horizon", "must be positive"));
        }
        if r.sample_times.is_empty() && !(r.sample_step > 0.0) {
            e.push(FieldError::new("run.sample_step", "must be positive"));
        }
        if r.sample_times.iter().any(|t| !(*t >= 0.0 && *t <= r.horizon)) {
            e.push(FieldError::new("run.sample_times", "every time must lie in [0, horizon]"));
        }
        if r.trajectories < 2 {
            e.push(FieldError::new("run.trajectories", "at least two are needed"));
        }
        if !(r.fit_window[0] < r.fit_window[1]) {
            e.push(FieldError::new("run.fit_window", "must be an increasing pair"));
        }
        if r.clt_times.iter().any(|t| !(*t > 0.0 && *t <= r.horizon)) {
            e.push(FieldError::new("run.clt_times", "every time must lie in (0, horizon]"));
        }
        for (i, k) in r.clt_k.iter().enumerate() {
            if k.len() != d {
                e.push(FieldError::new(format!("run.clt_k.{i}"), format!("has {} components, dim is {d}", k.len())));
            }
        }
        for (i, a) in r.initial.iter().enumerate() {
            if a.site.len() != d {
                e.push(FieldError::new(format!("run.initial.{i}.site"), format!("has {} components, dim is {d}", a.site.len())));
            }
        }
        if !r.initial.is_empty() {
            let mass: f64 = r.initial.iter().map(|a| a.re * a.re + a.im * a.im).sum();
            if (mass - 1.0).abs() > 1e-12 {
                e.push(FieldError::new("run.initial", format!("must be normalized, has mass {mass}")));
            }
        }
        if r.relaxation_times.iter().any(|t| !(*t > 0.0)) {
            e.push(FieldError::new("run.relaxation_times", "must be positive"));
        }
        for (i, f) in self.output.formats.iter().enumerate() {
            if f != "csv" && f != "json" {
                e.push(FieldError::new(format!("output.formats.{i}"), format!("unknown format `{f}`")));
            }
        }
        e
    }

    pub fn hopping(&self) -> HoppingKernel {
        HoppingKernel::new(self.model.dim, self.model.hopping.iter().map(|h| (h.offset.clone(), C64::new(h.re, h.im))).collect())
    }

    pub fn model(&self) -> Model {
        match &self.model.potential {
            PotentialBlock::Periodic { period, values } => {
                Model::Periodic(PeriodicPotential::new(period.clone(), values.clone()).expect("validated potential"))
            }
            PotentialBlock::AlmostMathieu { coupling, phase, frequency } => {
                Model::AlmostMathieu { coupling: *coupling, phase: *phase, frequency: *frequency }
            }
        }
    }

    /// The periodic potential, or a field error naming the subcommand that needs it.
    pub fn periodic_potential(&self, command: &str) -> Result<PeriodicPotential, FieldError> {
        match self.model() {
            Model::Periodic(u) => Ok(u),
            Model::AlmostMathieu { .. } => Err(FieldError::new("model.potential.kind", format!("`{command}` needs a periodic potential"))),
        }
    }

    pub fn initial_state(&self) -> Vec<(Vec<i64>, C64)> {
        if self.run.initial.is_empty() {
            vec![(vec![0; self.model.dim], C64::new(1.0, 0.0))]
        } else {
            self.run.initial.iter().map(|a| (a.site.clone(), C64::new(a.re, a.im))).collect()
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let mut times = if self.run.sample_times.is_empty() {
            let steps = (self.run.horizon / self.run.sample_step).round() as usize;
            (0..=steps).map(|i| (i as f64 * self.run.sample_step).min(self.run.horizon)).collect()
        } else {
            self.run.sample_times.clone()
        };
        times.extend(self.run.clt_times.iter().copied());
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        times
    }

    pub fn clt_grid(&self) -> Vec<Vec<f64>> {
        if !self.run.clt_k.is_empty() {
            return self.run.clt_k.clone();
        }
        let d = self.model.dim;
        let mut grid = Vec::new();
        for axis in 0..d {
            for i in 0..25 {
                let mut k = vec![0.0; d];
                k[axis] = -3.0 + 0.25 * i as f64;
                if d == 1 || k[axis] != 0.0 || axis == 0 {
                    grid.push(k);
                }
            }
        }
        grid
    }

    pub fn spectral_config(&self) -> SpectralConfig {
        let n = &self.numerics;
        SpectralConfig {
            solve_tol: n.solve_tol,
            eigen_tol: n.eigen_tol,
            inner_tol: n.inner_tol,
            max_iter: n.max_iter,
            restart: n.restart,
            arnoldi_steps: n.arnoldi_steps,
            ..SpectralConfig::default()
        }
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "model": {
            "dim": 1,
            "hopping": [{"offset": [1], "re": 1.0}, {"offset": [-1], "re": 1.0}],
            "potential": {"kind": "periodic", "period": [2], "values": [0.0, 1.0]}
        },
        "noise": {"rate": 1.0, "lambda": 0.5}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.numerics.radius, 10);
        assert_eq!(cfg.run.fit_window, [20.0, 40.0]);
        assert_eq!(cfg.sample_times().len(), 41);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::parse(
            MINIMAL,
            &["run.trajectories=5000".into(), "noise.lambda=1".into(), "model.potential.values.1=2.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.run.trajectories, 5000);
        assert_eq!(cfg.noise.lambda, Some(1.0));
        assert_eq!(cfg.model.potential, PotentialBlock::Periodic { period: vec![2], values: vec![0.0, 2.5] });
    }

    #[test]
    fn unknown_field_is_reported_with_its_path() {
        let err = ExperimentConfig::parse(MINIMAL, &["run.trajectorys=5".into()]).unwrap_err();
        match err {
            ConfigError::Invalid(v) => {
                assert_eq!(v[0].field, "run.trajectorys");
                assert!(v[0].message.contains("trajectorys"), "{v:?}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn semantic_errors_are_collected() {
        let err = ExperimentConfig::parse(MINIMAL, &["noise.rate=0".into(), "run.trajectories=1".into(), "schema_version=7".into()]).unwrap_err();
        let ConfigError::Invalid(v) = err else { panic!() };
        let fields: Vec<&str> = v.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(fields, vec!["schema_version", "noise.rate", "run.trajectories"]);
    }

    #[test]
    fn non_self_adjoint_hopping_is_rejected() {
        let err = ExperimentConfig::parse(MINIMAL, &["model.hopping.0.im=0.5".into()]).unwrap_err();
        let ConfigError::Invalid(v) = err else { panic!() };
        assert_eq!(v[0].field, "model.hopping");
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut doc = Value::Null;
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "a.b=1").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text, &[]).unwrap(), cfg);
    }
}
