//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! kind = "ou"          # ou | tanh | custom
//! a = 1.0
//! sigma = 0.5
//! dim = 1
//!
//! [objective]
//! kind = "linear"      # linear | tanh
//! beta_target = 1.0
//!
//! [schedule]
//! c = 1.0
//! q = 1.0
//!
//! [run]
//! t_end = 1000.0
//! seed = 0
//! seeds = 20
//! ```
//!
//! Every section except `[model]` and `[objective]` may be omitted; see the
//! README for the full key list and defaults.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithm::{RunConfig, TerminalOracle};
use crate::integrator::AlgorithmState;
use crate::model::{
    check_dissipativity, make_ou_model, make_tanh_model, ModelError, SdeModel,
    DEFAULT_DISSIPATIVITY_FACTOR,
};
use crate::noise::derive_seed;
use crate::objective::{ObjectiveSpec, TestFunction};
use crate::oracle::{stationary_expectation, OracleBudget, OracleError};
use crate::schedule::{validate_schedule, Schedule};
use crate::{Matrix, Vector};

const BETA_SEED_TAG: u64 = 0x4245_5441;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Semantic { key: String, message: String },
    #[error("assumption check failed: {0}")]
    Assumption(String),
    #[error("oracle failed while resolving the target: {0}")]
    Oracle(#[from] OracleError),
}

fn semantic<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Semantic {
        key: key.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
    pub c: Option<f64>,
    pub s0: Option<f64>,
    pub s1: Option<f64>,
    pub dim: Option<usize>,
    /// Registry key for `kind = "custom"`.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default = "default_linear")]
    pub kind: String,
    /// Linear weights; `x_0` when omitted.
    pub weights: Option<Vec<f64>>,
    pub index: Option<usize>,
    pub scale: Option<f64>,
    pub beta_target: Option<f64>,
    /// Sets `β` to the oracle stationary mean of `f` at this parameter.
    pub beta_from_theta: Option<Vec<f64>>,
}

fn default_linear() -> String {
    "linear".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub c: f64,
    pub q: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { c: 1.0, q: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: usize,
    /// Trajectory record spacing in time units.
    pub log_every: f64,
    /// Oracle checkpoint spacing in time units; `0` disables checkpoints.
    pub checkpoint_every: f64,
    pub max_abs: f64,
    pub dump_noise: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 1000.0,
            seed: 0,
            seeds: 1,
            log_every: 0.5,
            checkpoint_every: 0.0,
            max_abs: 1e6,
            dump_noise: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub theta: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    /// Column-major `d × ℓ`.
    pub x_tilde: Option<Vec<f64>>,
    pub x_bar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub checkpoint_t: f64,
    pub checkpoint_replicas: usize,
    pub terminal_t: f64,
    pub terminal_replicas: usize,
    pub burn_in: f64,
    pub dt: f64,
    pub h: f64,
    pub terminal: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        let cp = OracleBudget::checkpoint();
        let term = OracleBudget::terminal();
        Self {
            checkpoint_t: cp.t,
            checkpoint_replicas: cp.n_replicas,
            terminal_t: term.t,
            terminal_replicas: term.n_replicas,
            burn_in: term.burn_in_frac,
            dt: term.dt,
            h: TerminalOracle::default().h,
            terminal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub fluctuations: bool,
    pub kappa: f64,
    pub mu: f64,
    /// Random pairs used by the dissipativity quick-check.
    pub check_pairs: usize,
    pub check_radius: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            fluctuations: false,
            kappa: 0.1,
            mu: 1.0,
            check_pairs: 2000,
            check_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// Named models for `kind = "custom"`.
#[derive(Default, Clone)]
pub struct ModelRegistry {
    models: HashMap<String, Arc<dyn SdeModel>>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<&String> = self.models.keys().collect();
        names.sort();
        f.debug_struct("ModelRegistry")
            .field("models", &names)
            .finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, model: Arc<dyn SdeModel>) {
        self.models.insert(name.into(), model);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn SdeModel>> {
        self.models.get(name).cloned()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub skip_checks: bool,
    pub registry: ModelRegistry,
}

/// A parsed, validated configuration.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub file: ConfigFile,
    pub seeds: Vec<u64>,
    /// Raw file contents, hashed and copied next to run artifacts.
    pub text: String,
    /// Hex SHA-256 of `text`.
    pub hash: String,
    pub path: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_config(path: &Path, options: &LoadOptions) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut loaded = parse_config(&text, options)?;
    loaded.path = Some(path.to_path_buf());
    Ok(loaded)
}

/// Parses configuration text. Parse errors carry line and column.
pub fn parse_config(text: &str, options: &LoadOptions) -> Result<LoadedConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let run = build_run_config(&file, options)?;
    let seeds = (0..file.run.seeds as u64)
        .map(|i| file.run.seed + i)
        .collect();
    Ok(LoadedConfig {
        run,
        seeds,
        hash: sha256_hex(text.as_bytes()),
        text: text.to_string(),
        file,
        path: None,
    })
}

fn model_error(e: ModelError) -> ConfigError {
    let ModelError::InvalidParameter { name, reason } = e;
    if reason.contains("dissipativity") {
        ConfigError::Assumption(reason)
    } else {
        ConfigError::Semantic {
            key: format!("model.{name}"),
            message: reason,
        }
    }
}

fn build_model(m: &ModelSection, reg: &ModelRegistry) -> Result<Arc<dyn SdeModel>, ConfigError> {
    let need = |v: Option<f64>, key: &str| match v {
        Some(v) => Ok(v),
        None => semantic(key, "required for this model kind"),
    };
    let dim = m.dim.unwrap_or(1);
    match m.kind.as_str() {
        "ou" => Ok(Arc::new(
            make_ou_model(need(m.a, "model.a")?, need(m.sigma, "model.sigma")?, dim)
                .map_err(model_error)?,
        )),
        "tanh" => Ok(Arc::new(
            make_tanh_model(
                need(m.a, "model.a")?,
                need(m.c, "model.c")?,
                need(m.s0, "model.s0")?,
                need(m.s1, "model.s1")?,
                dim,
            )
            .map_err(model_error)?,
        )),
        "custom" => {
            let Some(name) = &m.name else {
                return semantic("model.name", "custom models need a registry name");
            };
            reg.get(name).ok_or_else(|| ConfigError::Semantic {
                key: "model.name".into(),
                message: format!("no custom model registered as `{name}`"),
            })
        }
        other => semantic(
            "model.kind",
            format!("unknown kind `{other}` (ou, tanh, custom)"),
        ),
    }
}

fn build_test_function(o: &ObjectiveSection, d: usize) -> Result<TestFunction, ConfigError> {
    match o.kind.as_str() {
        "linear" => {
            let weights = o.weights.clone().unwrap_or_else(|| {
                let mut w = vec![0.0; d];
                w[0] = 1.0;
                w
            });
            if weights.len() != d {
                return semantic(
                    "objective.weights",
                    format!("expected {d} weights, got {}", weights.len()),
                );
            }
            Ok(TestFunction::Linear { weights })
        }
        "tanh" => {
            let index = o.index.unwrap_or(0);
            if index >= d {
                return semantic(
                    "objective.index",
                    format!("must be below the dimension {d}"),
                );
            }
            Ok(TestFunction::Tanh {
                index,
                scale: o.scale.unwrap_or(1.0),
            })
        }
        other => semantic(
            "objective.kind",
            format!("unknown kind `{other}` (linear, tanh)"),
        ),
    }
}

fn vector_or(
    v: &Option<Vec<f64>>,
    len: usize,
    key: &str,
    default: Vector,
) -> Result<Vector, ConfigError> {
    match v {
        None => Ok(default),
        Some(v) if v.len() == len => Ok(Vector::from_column_slice(v)),
        Some(v) => semantic(key, format!("expected {len} entries, got {}", v.len())),
    }
}

fn build_run_config(file: &ConfigFile, options: &LoadOptions) -> Result<RunConfig, ConfigError> {
    let model = build_model(&file.model, &options.registry)?;
    let (d, ell) = (model.state_dim(), model.param_dim());
    let f = build_test_function(&file.objective, d)?;

    let s = Schedule::new(file.schedule.c, file.schedule.q);
    if let Some(v) = validate_schedule(&s).violation {
        return semantic("schedule", v.message());
    }

    let r = &file.run;
    if !(r.dt > 0.0) {
        return semantic("run.dt", "must be positive");
    }
    if !(r.t_end >= 100.0 * r.dt) {
        return semantic("run.t_end", "must be at least 100·dt");
    }
    if r.seeds == 0 {
        return semantic("run.seeds", "must be at least 1");
    }
    if !(r.log_every > 0.0) {
        return semantic("run.log_every", "must be positive");
    }
    if !(r.checkpoint_every >= 0.0) {
        return semantic("run.checkpoint_every", "must be non-negative");
    }
    if !(r.max_abs > 0.0) {
        return semantic("run.max_abs", "must be positive");
    }
    let dg = &file.diagnostics;
    if !(dg.kappa > 0.0) {
        return semantic("diagnostics.kappa", "must be positive");
    }
    if !(dg.mu > 0.0) {
        return semantic("diagnostics.mu", "must be positive");
    }
    if dg.fluctuations && r.checkpoint_every == 0.0 {
        return semantic(
            "diagnostics.fluctuations",
            "needs run.checkpoint_every > 0 for oracle values",
        );
    }

    let o = &file.oracle;
    let budget = |t: f64, n: usize| OracleBudget {
        t,
        burn_in_frac: o.burn_in,
        n_replicas: n,
        dt: o.dt,
        x0: None,
    };
    let checkpoint_budget = budget(o.checkpoint_t, o.checkpoint_replicas);
    let terminal_budget = budget(o.terminal_t, o.terminal_replicas);
    if !(o.h > 0.0) {
        return semantic("oracle.h", "must be positive");
    }

    if !options.skip_checks {
        let rep = check_dissipativity(
            model.as_ref(),
            dg.check_pairs,
            dg.check_radius,
            DEFAULT_DISSIPATIVITY_FACTOR,
            0,
        );
        if !rep.holds {
            return Err(ConfigError::Assumption(format!(
                "dissipativity <μ(x1)-μ(x2), x1-x2> + 3.5|σ(x1)-σ(x2)|² ≤ -β|x1-x2|² \
                 fails with β̂ = {:.4} (witness {:?})",
                rep.beta_hat, rep.witness
            )));
        }
    }

    let beta_target = match (&file.objective.beta_target, &file.objective.beta_from_theta) {
        (Some(b), None) => *b,
        (None, Some(theta_star)) => {
            let theta_star = vector_or(
                &Some(theta_star.clone()),
                ell,
                "objective.beta_from_theta",
                Vector::zeros(ell),
            )?;
            let ff = f.clone();
            stationary_expectation(
                model.as_ref(),
                &theta_star,
                &move |x: &Vector| ff.value(x),
                &terminal_budget,
                derive_seed(r.seed, BETA_SEED_TAG),
            )?
            .value
        }
        _ => {
            return semantic(
                "objective.beta_target",
                "set exactly one of beta_target and beta_from_theta",
            )
        }
    };

    let i = &file.init;
    let theta = vector_or(&i.theta, ell, "init.theta", Vector::zeros(ell))?;
    let x = vector_or(&i.x, d, "init.x", Vector::zeros(d))?;
    let x_bar = vector_or(&i.x_bar, d, "init.x_bar", Vector::zeros(d))?;
    let x_tilde = match &i.x_tilde {
        None => Matrix::zeros(d, ell),
        Some(v) if v.len() == d * ell => Matrix::from_column_slice(d, ell, v),
        Some(v) => {
            return semantic(
                "init.x_tilde",
                format!("expected {} entries, got {}", d * ell, v.len()),
            )
        }
    };

    let mut run = RunConfig::new(
        model,
        ObjectiveSpec::new(f, beta_target),
        s,
        theta.clone(),
        r.t_end,
    );
    run.dt = r.dt;
    run.seed = r.seed;
    run.initial = AlgorithmState::new(theta, x, x_tilde, x_bar);
    run.log_every = run.steps_for(r.log_every);
    run.checkpoint_every = if r.checkpoint_every > 0.0 {
        run.steps_for(r.checkpoint_every)
    } else {
        0
    };
    run.checkpoint_budget = checkpoint_budget;
    run.terminal = TerminalOracle {
        enabled: o.terminal,
        budget: terminal_budget,
        h: o.h,
    };
    run.fluctuations = dg.fluctuations;
    run.kappa = dg.kappa;
    run.divergence_bound = r.max_abs;
    run.record_noise = r.dump_noise;
    run.validate().map_err(|e| ConfigError::Semantic {
        key: "run".into(),
        message: e.to_string(),
    })?;
    Ok(run)
}
