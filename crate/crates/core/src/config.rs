//! Run configuration: a TOML file with the sections `[model]`, `[grid]`,
//! `[basis]`, `[stepper]`, `[initial-data]`, `[output]` and the optional
//! `[diagnostics]` and `[sweep]`.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! mu = 0.5
//!
//! [grid]
//! dim = 1
//! n = 32
//!
//! [basis]
//! potential = "hookean"
//! n_q = 6
//!
//! [stepper]
//! dt = 0.01
//! t_end = 1.0
//! scheme = "imex"
//!
//! [initial-data]
//! family = "modal"
//! amplitude = 1e-3
//!
//! [output]
//! csv = "run.csv"
//! ```

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::init::{modal_state, random_state, truncate_degree, ModalSpec};
use crate::params::ModelParams;
use crate::potential::Potential;
use crate::qbasis::QBasis;
use crate::state::FlowState;
use crate::stepper::StepConfig;
use crate::xgrid::TorusGrid;

fn config_err(section: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        section: section.into(),
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    /// Points per axis.
    pub n: usize,
    /// Period of every axis.
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 1, n: 32, length: 2.0 * PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Hookean,
    Fene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub potential: PotentialKind,
    /// Configuration-space dimension; defaults to the grid dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_q: Option<usize>,
    /// Maximal polynomial degree per axis.
    pub n_q: usize,
    /// FENE exponent.
    pub k: f64,
    /// FENE extensibility.
    pub b0: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            potential: PotentialKind::Hookean,
            dim_q: None,
            n_q: 6,
            k: 2.0,
            b0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Zero,
    Modal,
    Random,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub family: Family,
    pub amplitude: f64,
    /// Fourier mode numbers of the modal family; defaults to `(1, 0, ...)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Vec<i64>>,
    /// Multi-index of the basis function carrying the modal micro part;
    /// defaults to basis function 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_index: Option<Vec<usize>>,
    /// Weights of the `(rho, u, g)` parts of the modal family.
    pub weights: [f64; 3],
    /// Random family: zero q-mean (`m = 0`).
    pub mean_zero: bool,
    /// Random family: drop basis functions above this total degree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            family: Family::Zero,
            amplitude: 0.0,
            mode: None,
            q_index: None,
            weights: [1.0, 1.0, 1.0],
            mean_zero: false,
            max_degree: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Energy time series; none means no CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Snapshot file prefix; files are `<prefix>_<step>.snap`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_prefix: Option<PathBuf>,
    /// Write a snapshot every this many steps (0 disables).
    pub snapshot_every: usize,
    /// Key-value file for the validator report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// Settings of the diagnostic subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Random states drawn by the cancellation check.
    pub samples: usize,
    pub max_order: usize,
    /// Number of step halvings in the audit refinement study.
    pub refinements: usize,
    /// Pass threshold of the normalized cancellation residual.
    pub cancellation_tol: f64,
    /// Pass threshold of the closure deviation.
    pub closure_tol: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            samples: 20,
            max_order: 3,
            refinements: 1,
            cancellation_tol: 1e-8,
            closure_tol: 1e-6,
        }
    }
}

/// One key varied over a list of values; every value is an isolated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted key such as `model.mu` or `initial-data.amplitude`.
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of the random families and the random diagnostics.
    pub seed: u64,
    pub model: ModelParams,
    pub grid: GridConfig,
    pub basis: BasisConfig,
    pub stepper: StepConfig,
    #[serde(rename = "initial-data")]
    pub initial_data: InitialConfig,
    pub output: OutputConfig,
    pub diagnostics: DiagnosticsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

const SECTIONS: [&str; 8] = ["model", "grid", "basis", "stepper", "initial-data", "output", "diagnostics", "sweep"];

fn unknown_key(message: &str) -> String {
    message
        .split("unknown field `")
        .nth(1)
        .and_then(|rest| rest.split('`').next())
        .unwrap_or("")
        .to_string()
}

fn section<T: serde::de::DeserializeOwned + Default>(table: &toml::Table, name: &str) -> Result<T> {
    match table.get(name) {
        None => Ok(T::default()),
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            config_err(name, &unknown_key(&msg), msg)
        }),
    }
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_err("", "", e.to_string()))?;
    for (k, v) in &table {
        if k == "seed" {
            continue;
        }
        if !SECTIONS.contains(&k.as_str()) {
            return Err(config_err(k, "", format!("unknown section (expected one of {SECTIONS:?} or `seed`)")));
        }
        if !v.is_table() {
            return Err(config_err(k, "", "expected a section"));
        }
    }
    let seed = match table.get("seed") {
        None => 0,
        Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(other) => return Err(config_err("", "seed", format!("expected a non-negative integer, got {other}"))),
    };
    let sweep = match table.get("sweep") {
        None => None,
        Some(v) => Some(v.clone().try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            config_err("sweep", &unknown_key(&msg), msg)
        })?),
    };
    let cfg = RunConfig {
        seed,
        model: section(&table, "model")?,
        grid: section(&table, "grid")?,
        basis: section(&table, "basis")?,
        stepper: section(&table, "stepper")?,
        initial_data: section(&table, "initial-data")?,
        output: section(&table, "output")?,
        diagnostics: section(&table, "diagnostics")?,
        sweep,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn lift(section: &str, e: Error) -> Error {
    match e {
        Error::Parameter(m) => {
            let key = m.split_whitespace().next().unwrap_or("").to_string();
            config_err(section, &key, m)
        }
        other => other,
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn dim_q(&self) -> usize {
        self.basis.dim_q.unwrap_or(match self.basis.potential {
            PotentialKind::Hookean => self.grid.dim,
            PotentialKind::Fene => 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| lift("model", e))?;
        if !(1..=3).contains(&self.grid.dim) {
            return Err(config_err("grid", "dim", format!("must be 1, 2 or 3 (got {})", self.grid.dim)));
        }
        if self.grid.n < 4 || !self.grid.n.is_multiple_of(2) {
            return Err(config_err("grid", "n", format!("must be even and >= 4 (got {})", self.grid.n)));
        }
        if !(self.grid.length > 0.0) || !self.grid.length.is_finite() {
            return Err(config_err("grid", "length", format!("must be positive (got {})", self.grid.length)));
        }
        let dq = self.dim_q();
        if self.basis.potential == PotentialKind::Fene && dq != 1 {
            return Err(config_err(
                "basis",
                "dim_q",
                format!("FENE runs in the reduced one-dimensional mode; set dim_q = 1 (got {dq})"),
            ));
        }
        if !(1..=3).contains(&dq) {
            return Err(config_err("basis", "dim_q", format!("must be 1, 2 or 3 (got {dq})")));
        }
        if dq < self.grid.dim {
            return Err(config_err(
                "basis",
                "dim_q",
                format!(
                    "dim_q = {dq} is smaller than the grid dimension {}; velocity component i stretches q_i",
                    self.grid.dim
                ),
            ));
        }
        if self.basis.n_q < 1 {
            return Err(config_err("basis", "n_q", "must be >= 1"));
        }
        self.stepper.validate().map_err(|e| lift("stepper", e))?;
        let init = &self.initial_data;
        if !(init.amplitude >= 0.0) || !init.amplitude.is_finite() {
            return Err(config_err("initial-data", "amplitude", format!("must be >= 0 (got {})", init.amplitude)));
        }
        if let Some(mode) = &init.mode {
            if mode.len() != self.grid.dim {
                return Err(config_err(
                    "initial-data",
                    "mode",
                    format!("needs {} entries, got {}", self.grid.dim, mode.len()),
                ));
            }
        }
        if let Some(q) = &init.q_index {
            if q.len() != dq {
                return Err(config_err("initial-data", "q_index", format!("needs {dq} entries, got {}", q.len())));
            }
        }
        if init.family == Family::Snapshot {
            match &init.path {
                None => return Err(config_err("initial-data", "path", "the snapshot family needs a path")),
                Some(p) if !p.is_file() => {
                    return Err(config_err("initial-data", "path", format!("{} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if self.output.snapshot_every > 0 && self.output.snapshot_prefix.is_none() {
            return Err(config_err("output", "snapshot_prefix", "needed when snapshot_every > 0"));
        }
        let d = &self.diagnostics;
        if d.samples == 0 || d.max_order > 3 || d.refinements == 0 {
            return Err(config_err(
                "diagnostics",
                "",
                format!(
                    "need samples >= 1, max_order <= 3 and refinements >= 1 (got {}, {}, {})",
                    d.samples, d.max_order, d.refinements
                ),
            ));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(config_err("sweep", "values", "must not be empty"));
            }
            for v in &sw.values {
                self.with_override(&sw.key, *v)?;
            }
        }
        Ok(())
    }

    /// Copy with one dotted numeric key replaced, validated.
    pub fn with_override(&self, key: &str, value: f64) -> Result<RunConfig> {
        let (sec, field) = key
            .split_once('.')
            .ok_or_else(|| config_err("sweep", "key", format!("`{key}` is not of the form section.key")))?;
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("serialized configuration parses");
        table.remove("sweep");
        let target = table
            .get_mut(sec)
            .and_then(|t| t.as_table_mut())
            .ok_or_else(|| config_err("sweep", "key", format!("unknown section `{sec}`")))?;
        let new = match target.get(field) {
            Some(toml::Value::Integer(_)) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            Some(toml::Value::Float(_)) | None => toml::Value::Float(value),
            Some(_) => return Err(config_err("sweep", "key", format!("`{key}` is not numeric"))),
        };
        target.insert(field.to_string(), new);
        let text = toml::to_string(&table).expect("table serializes");
        parse_config(&text)
    }

    /// Every run of the sweep, or just this configuration.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        match &self.sweep {
            None => Ok(vec![self.clone()]),
            Some(sw) => sw.values.iter().map(|v| self.with_override(&sw.key, *v)).collect(),
        }
    }

    pub fn potential(&self) -> Result<Potential> {
        match self.basis.potential {
            PotentialKind::Hookean => Potential::hookean(self.model.sigma, self.model.r, self.dim_q()),
            PotentialKind::Fene => Potential::fene(self.basis.k, self.basis.b0)?.with_thermal_scale(self.model.sigma, self.model.r),
        }
    }

    /// Potential without the solver's `k > 1` guard, for the validator.
    pub fn potential_for_validation(&self) -> Result<Potential> {
        match self.basis.potential {
            PotentialKind::Hookean => self.potential(),
            PotentialKind::Fene => Potential::fene_unchecked(self.basis.k, self.basis.b0),
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.dim, self.grid.n, self.grid.length)
    }

    pub fn build_basis(&self) -> Result<QBasis> {
        QBasis::build(&self.potential()?, self.basis.n_q)
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.model, self.build_basis()?, self.grid()?)
    }

    /// Initial state of the run.
    pub fn initial_state(&self, model: &Model) -> Result<FlowState> {
        let init = &self.initial_data;
        let grid = &model.grid;
        let basis = &model.basis;
        match init.family {
            Family::Zero => Ok(model.zero_state()),
            Family::Modal => {
                let mut spec = ModalSpec::new(init.amplitude, grid.dim());
                if let Some(m) = &init.mode {
                    spec.mode = m.clone();
                }
                if let Some(q) = &init.q_index {
                    spec.q_mode = basis.indices().iter().position(|i| i == q).ok_or_else(|| {
                        config_err("initial-data", "q_index", format!("{q:?} is not in the basis (n_q = {})", basis.n_q()))
                    })?;
                }
                spec.weights = init.weights;
                modal_state(grid, basis, &spec).map_err(|e| lift("initial-data", e))
            }
            Family::Random => {
                let mut s = random_state(grid, basis, init.amplitude, self.seed, init.mean_zero);
                if let Some(d) = init.max_degree {
                    truncate_degree(&mut s, basis, d);
                }
                Ok(s)
            }
            Family::Snapshot => {
                let path = init.path.as_ref().expect("validated");
                let snap = crate::io::read_snapshot(path)?;
                snap.check_compatible(grid, basis)?;
                Ok(snap.state)
            }
        }
    }
}
