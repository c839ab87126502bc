use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aed::{PriorBounds, Thresholds};
use crate::attacks::{AttackKind, AttackStrategy, AttackerState};
use crate::channel::EnvConfig;
use crate::error::{AedError, Result};
use crate::predictor::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    /// Undefended training, clean evaluation only.
    Clean,
    /// Undefended training, evolving attacker on the evaluation inputs.
    Attacked,
    /// The full adaptive defense loop.
    Aed,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Clean => "CLEAN",
            Scenario::Attacked => "ATTACKED",
            Scenario::Aed => "AED",
        }
    }
}

/// Initial attacker and its escalation law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerInit {
    pub kind: AttackKind,
    pub eps: f64,
    pub alpha: f64,
    pub steps: u32,
    pub delay: usize,
    pub flip_fraction: f64,
    pub random_start: bool,
    pub target_accuracy: f64,
    pub escalation_step: f64,
    pub eps_cap: f64,
    pub steps_cap: u32,
}

impl Default for AttackerInit {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pgd,
            eps: 0.03,
            alpha: 0.03,
            steps: 2,
            delay: 0,
            flip_fraction: 0.0,
            random_start: false,
            target_accuracy: 0.3,
            escalation_step: 0.03,
            eps_cap: 0.2,
            steps_cap: 10,
        }
    }
}

impl AttackerInit {
    pub fn strategy(&self) -> AttackStrategy {
        AttackStrategy {
            kind: self.kind,
            eps: self.eps,
            alpha: self.alpha,
            steps: self.steps,
            delay: self.delay,
            flip_fraction: self.flip_fraction,
            random_start: self.random_start,
        }
    }

    pub fn state(&self) -> AttackerState {
        AttackerState::new(
            self.strategy(),
            self.target_accuracy,
            self.escalation_step,
            self.eps_cap,
            self.steps_cap,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy().validate(self.eps_cap)?;
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(AedError::config("attacker.target_accuracy", "must lie in [0, 1]"));
        }
        if !(self.escalation_step > 0.0 && self.escalation_step.is_finite()) {
            return Err(AedError::config("attacker.escalation_step", "must be positive"));
        }
        if self.steps > self.steps_cap {
            return Err(AedError::config("attacker.steps", "exceeds attacker.steps_cap"));
        }
        Ok(())
    }
}

fn default_max_epochs() -> usize {
    40
}
fn default_master_seed() -> u64 {
    2024
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/out")
}
fn default_k() -> usize {
    3
}
fn default_generation_size() -> usize {
    12
}
fn default_diversity_fraction() -> f64 {
    0.25
}
fn default_refine_budget() -> usize {
    5
}
fn default_pool_capacity() -> usize {
    24
}
fn default_dt_samples() -> usize {
    1000
}
fn default_staleness_limit() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Candidates validated on the DT per generation.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_generation_size")]
    pub generation_size: usize,
    #[serde(default = "default_diversity_fraction")]
    pub diversity_fraction: f64,
    /// Refinement iterations per inner loop and per attack episode.
    #[serde(default = "default_refine_budget")]
    pub refine_budget: usize,
    #[serde(default = "default_pool_capacity")]
    pub pool_capacity: usize,
    /// DT samples used per validation (strided subsample of the DT split).
    #[serde(default = "default_dt_samples")]
    pub dt_samples: usize,
    /// Consecutive top-1 disagreements that trigger a surrogate rebuild.
    #[serde(default = "default_staleness_limit")]
    pub staleness_limit: usize,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker: Option<AttackerInit>,
}

impl RunConfig {
    /// A config with every default filled in, including the sections the
    /// scenario needs.
    pub fn new(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            max_epochs: default_max_epochs(),
            master_seed: default_master_seed(),
            output_dir: default_output_dir(),
            k: default_k(),
            generation_size: default_generation_size(),
            diversity_fraction: default_diversity_fraction(),
            refine_budget: default_refine_budget(),
            pool_capacity: default_pool_capacity(),
            dt_samples: default_dt_samples(),
            staleness_limit: default_staleness_limit(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            priors: None,
            thresholds: None,
            attacker: None,
        };
        cfg.materialize();
        cfg
    }

    /// Fills in default sections the scenario needs but the file omitted.
    pub fn materialize(&mut self) {
        if self.scenario == Scenario::Aed {
            self.priors.get_or_insert_with(PriorBounds::default);
            self.thresholds.get_or_insert_with(Thresholds::default);
        }
        if self.scenario != Scenario::Clean {
            self.attacker.get_or_insert_with(AttackerInit::default);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(AedError::config("max_epochs", "must be positive"));
        }
        if self.k == 0 {
            return Err(AedError::config("k", "must be positive"));
        }
        if self.generation_size == 0 {
            return Err(AedError::config("generation_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.diversity_fraction) {
            return Err(AedError::config("diversity_fraction", "must lie in [0, 1]"));
        }
        if self.pool_capacity == 0 {
            return Err(AedError::config("pool_capacity", "must be positive"));
        }
        if self.dt_samples == 0 {
            return Err(AedError::config("dt_samples", "must be positive"));
        }
        if self.staleness_limit == 0 {
            return Err(AedError::config("staleness_limit", "must be positive"));
        }
        if i64::try_from(self.master_seed).is_err() {
            return Err(AedError::config("master_seed", "must fit in a signed 64-bit integer"));
        }
        self.env.validate()?;
        self.train.validate()?;
        if self.train.batch_size > self.env.trace_len - self.env.window {
            return Err(AedError::config("train.batch_size", "exceeds the training set size"));
        }
        match self.scenario {
            Scenario::Clean => {}
            Scenario::Attacked => {
                self.attacker
                    .as_ref()
                    .ok_or_else(|| AedError::config("attacker", "required for the ATTACKED scenario"))?
                    .validate()?;
            }
            Scenario::Aed => {
                self.priors
                    .as_ref()
                    .ok_or_else(|| AedError::config("priors", "required for the AED scenario"))?
                    .validate()?;
                self.thresholds
                    .as_ref()
                    .ok_or_else(|| AedError::config("thresholds", "required for the AED scenario"))?
                    .validate()?;
                if let Some(a) = &self.attacker {
                    a.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Parses, materializes defaults and validates a TOML document. `path` is
    /// only used in error messages.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |key: String, reason: String| AedError::ConfigParse {
            path: path.to_path_buf(),
            key,
            reason,
        };
        let de =
            toml::de::Deserializer::parse(text).map_err(|e| parse_err("<syntax>".into(), e.message().to_string()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let reason = e.inner().message().to_string();
            parse_err(unknown_key_path(&key, &reason), reason)
        })?;
        cfg.materialize();
        cfg.validate().map_err(|e| match e {
            AedError::Config { field, reason } => parse_err(field, reason),
            other => other,
        })?;
        Ok(cfg)
    }

    /// The resolved config as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AedError::config("<config>", e.to_string()))
    }
}

/// serde reports an unknown key at its parent's path; append the key itself.
fn unknown_key_path(parent: &str, reason: &str) -> String {
    let Some(rest) = reason.strip_prefix("unknown field `") else {
        return parent.to_string();
    };
    let name = rest.split('`').next().unwrap_or(rest);
    if parent.is_empty() || parent == "." {
        name.to_string()
    } else {
        format!("{parent}.{name}")
    }
}

/// Reads and parses a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AedError::ConfigParse {
        path: path.to_path_buf(),
        key: "<file>".into(),
        reason: e.to_string(),
    })?;
    RunConfig::from_toml(&text, path)
}
