//! JSON experiment configuration.
//!
//! Parsing goes through `serde_path_to_error`, so type errors name the
//! offending field (`models[1].prior_mean[0]`). Semantic checks run after
//! parsing and report the same kind of path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symdisc_core::criteria::CriterionKind;
use symdisc_core::designer::{DesignBox, DesignProblem, OptimizerConfig};
use symdisc_core::hmc::HmcConfig;
use symdisc_core::model::{Barrier, ModelSpec, NoiseModel, Truth};
use symdisc_core::predictive::Backend;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid { field: field.into(), message: message.into() }
    }

    /// Path of the offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } if !field.is_empty() => Some(field),
            _ => None,
        }
    }
}

/// Either the string `"identity"` or an explicit row list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

impl Default for CovSpec {
    fn default() -> Self {
        CovSpec::Named("identity".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub anchor: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub expression: String,
    pub param_names: Vec<String>,
    pub prior_mean: Vec<f64>,
    #[serde(default)]
    pub prior_cov: CovSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub model: String,
    pub theta_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcSettings {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept: f64,
    pub step_jitter: f64,
}

impl Default for HmcSettings {
    fn default() -> Self {
        let d = HmcConfig::default();
        Self {
            n_samples: d.n_samples,
            n_warmup: d.n_warmup,
            leapfrog_steps: d.leapfrog_steps,
            initial_step_size: d.initial_step_size,
            target_accept: d.target_accept,
            step_jitter: d.step_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub n_starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self { n_starts: d.n_starts, max_iters: d.max_iters, grad_tol: d.grad_tol }
    }
}

fn default_rounds() -> usize {
    18
}

fn default_trials() -> usize {
    20
}

fn default_criterion() -> String {
    "re".into()
}

fn default_backend() -> String {
    "conv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub inputs: Vec<String>,
    pub models: Vec<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthConfig>,
    pub noise_sigma2: f64,
    pub design_box: BoxConfig,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub hmc: HmcSettings,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A validated configuration with its engine objects built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: DesignProblem,
    pub truth: Option<Truth>,
}

impl Experiment {
    pub fn model_names(&self) -> Vec<String> {
        self.problem.models.iter().map(|m| m.name().to_string()).collect()
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { String::new() } else { field };
        ConfigError::invalid(field, e.into_inner().to_string())
    })
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Experiment, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)?.build()
}

pub fn parse_criterion(name: &str) -> Result<CriterionKind, ConfigError> {
    CriterionKind::from_name(name).ok_or_else(|| {
        ConfigError::invalid(
            "criterion",
            format!("unknown criterion '{name}'; valid options: {}", CriterionKind::NAMES.join(", ")),
        )
    })
}

pub fn parse_backend(name: &str) -> Result<Backend, ConfigError> {
    match name {
        "quad" => Ok(Backend::quad()),
        "conv" => Ok(Backend::conv()),
        _ => Err(ConfigError::invalid("backend", format!("unknown backend '{name}'; valid options: quad, conv"))),
    }
}

fn cov_rows(spec: &CovSpec, n: usize, field: &str) -> Result<Vec<f64>, ConfigError> {
    match spec {
        CovSpec::Named(s) if s == "identity" => {
            Ok((0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect())
        }
        CovSpec::Named(s) => Err(ConfigError::invalid(field, format!("expected \"identity\" or a matrix, got \"{s}\""))),
        CovSpec::Matrix(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(ConfigError::invalid(field, format!("expected a {n}x{n} matrix")));
            }
            Ok(rows.iter().flatten().copied().collect())
        }
    }
}

impl ExperimentConfig {
    /// Validates cross-references and builds the engine objects.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        if self.inputs.is_empty() {
            return Err(ConfigError::invalid("inputs", "at least one input is required"));
        }
        for (i, name) in self.inputs.iter().enumerate() {
            if self.inputs[..i].contains(name) {
                return Err(ConfigError::invalid(format!("inputs[{i}]"), format!("duplicate input '{name}'")));
            }
        }
        if self.models.is_empty() {
            return Err(ConfigError::invalid("models", "at least one model is required"));
        }
        let noise = NoiseModel::new(self.noise_sigma2).map_err(|e| ConfigError::invalid("noise_sigma2", e.to_string()))?;
        let d = self.inputs.len();
        for (field, v) in [("design_box.lower", &self.design_box.lower), ("design_box.upper", &self.design_box.upper)] {
            if v.len() != d {
                return Err(ConfigError::invalid(field, format!("expected {d} values (one per input), got {}", v.len())));
            }
        }
        let design_box = DesignBox::new(self.design_box.lower.clone(), self.design_box.upper.clone())
            .map_err(|e| ConfigError::invalid("design_box", e.to_string()))?;
        if self.rounds == 0 {
            return Err(ConfigError::invalid("rounds", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(ConfigError::invalid("trials", "must be at least 1"));
        }

        let mut models = Vec::with_capacity(self.models.len());
        for (i, m) in self.models.iter().enumerate() {
            let at = |f: &str| format!("models[{i}].{f}");
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(ConfigError::invalid(at("name"), format!("duplicate model name '{}'", m.name)));
            }
            let n = m.param_names.len();
            if m.prior_mean.len() != n {
                return Err(ConfigError::invalid(
                    at("prior_mean"),
                    format!("expected {n} values (one per parameter), got {}", m.prior_mean.len()),
                ));
            }
            let cov = cov_rows(&m.prior_cov, n, &at("prior_cov"))?;
            let barrier = match &m.barrier {
                None => None,
                Some(b) => {
                    if b.anchor.len() != d {
                        return Err(ConfigError::invalid(at("barrier.anchor"), format!("expected {d} values")));
                    }
                    if !(b.scale > 0.0 && b.scale.is_finite()) {
                        return Err(ConfigError::invalid(at("barrier.scale"), "must be positive"));
                    }
                    Some(Barrier { anchor: b.anchor.clone(), scale: b.scale })
                }
            };
            let spec = ModelSpec::new(
                m.name.clone(),
                &m.expression,
                self.inputs.clone(),
                m.param_names.clone(),
                m.prior_mean.clone(),
                cov,
                barrier,
            )
            .map_err(|e| {
                use symdisc_core::Error as E;
                let field = match e {
                    E::NotPositiveDefinite | E::DimensionMismatch { .. } => at("prior_cov"),
                    E::InvalidArgument(_) if m.barrier.is_some() => at("barrier"),
                    _ => at("expression"),
                };
                ConfigError::invalid(field, format!("model '{}': {e}", m.name))
            })?;
            models.push(spec);
        }

        let truth = match &self.truth {
            None => None,
            Some(t) => {
                let model = models
                    .iter()
                    .find(|m| m.name() == t.model)
                    .ok_or_else(|| ConfigError::invalid("truth.model", format!("no model named '{}'", t.model)))?;
                if t.theta_true.len() != model.dim() {
                    return Err(ConfigError::invalid(
                        "truth.theta_true",
                        format!("model '{}' has {} parameters, got {} values", t.model, model.dim(), t.theta_true.len()),
                    ));
                }
                Some(Truth { model: model.clone(), theta: t.theta_true.clone() })
            }
        };

        let h = &self.hmc;
        let hmc = HmcConfig {
            n_samples: h.n_samples,
            n_warmup: h.n_warmup,
            leapfrog_steps: h.leapfrog_steps,
            initial_step_size: h.initial_step_size,
            target_accept: h.target_accept,
            step_jitter: h.step_jitter,
            seed: self.seed,
        };
        hmc.validate().map_err(|e| ConfigError::invalid("hmc", e.to_string()))?;
        let optimizer = OptimizerConfig {
            n_starts: self.optimizer.n_starts,
            max_iters: self.optimizer.max_iters,
            grad_tol: self.optimizer.grad_tol,
            seed: self.seed,
            ..OptimizerConfig::default()
        };
        optimizer.validate().map_err(|e| ConfigError::invalid("optimizer", e.to_string()))?;

        let problem = DesignProblem {
            models,
            noise,
            design_box,
            criterion: parse_criterion(&self.criterion)?,
            backend: parse_backend(&self.backend)?,
            optimizer,
            hmc,
        };
        problem.validate().map_err(|e| ConfigError::invalid("", e.to_string()))?;
        Ok(Experiment { config: self.clone(), problem, truth })
    }
}

/// Run-size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 1000 HMC samples per model and refresh.
    Desk,
    /// The configuration's own settings.
    Full,
}

pub const DESK_HMC_SAMPLES: usize = 1000;

impl ExperimentConfig {
    pub fn with_profile(mut self, profile: Profile) -> Self {
        if profile == Profile::Desk {
            self.hmc.n_samples = DESK_HMC_SAMPLES;
        }
        self
    }
}

/// Directory holding the bundled configurations.
pub fn bundled_config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}
