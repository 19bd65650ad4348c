//! Experiment configuration schema: JSON in, validated and fully-defaulted
//! config out. Parsing reports the document path of the offending key so a
//! bad config is diagnosable without reading source.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::AblationConfig;
use crate::env::{ReplayConfig, SyntheticConfig};
use crate::policies::{PolicyKind, PolicySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid config `{field}`: {message}")]
    Invalid { field: String, message: String },
}

/// Which environment backs the simulation. Externally tagged so each variant
/// body is validated by its own schema:
/// `{"synthetic": {...}}` or `{"replay": {"path": "log.csv", "config": {...}}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentChoice {
    Synthetic(SyntheticConfig),
    Replay(ReplaySource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySource {
    /// CSV with header `user_id,item_id,f0..f{d-1},reward`.
    pub path: PathBuf,
    #[serde(default)]
    pub config: ReplayConfig,
}

/// Constraint layout of the assembled per-round LP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Global cost budget plus per-provider cost ceilings.
    #[default]
    Standard,
    /// Global cost budget plus per-provider minimum-send floors (the ceilings
    /// are dropped); floors are `min_send_multiplier` times the random-policy
    /// per-provider selection baseline.
    Email,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentChoice,
    /// Agents to simulate side by side; defaults to the standard four-agent
    /// lineup.
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    /// Rounds per run (T). Defaults: 30 synthetic, 50 replay.
    #[serde(default)]
    pub rounds: Option<usize>,
    /// Independent runs (S). Defaults: 50 synthetic, 20 replay.
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    /// Passes of the biased logger used to build the shared warm-start pool.
    #[serde(default = "default_logging_rounds")]
    pub logging_rounds: usize,
    #[serde(default)]
    pub scenario: Scenario,
    /// Email scenario: floor = multiplier x random-policy provider sends.
    #[serde(default = "default_min_send_multiplier")]
    pub min_send_multiplier: f64,
    /// Where `simulate` writes its CSV reports.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_policies() -> Vec<PolicySpec> {
    [
        PolicyKind::Banditlp,
        PolicyKind::Nnts,
        PolicyKind::LinucbLp,
        PolicyKind::NnLp,
    ]
    .into_iter()
    .map(|kind| PolicySpec {
        kind,
        ..PolicySpec::default()
    })
    .collect()
}

fn default_logging_rounds() -> usize {
    1
}

fn default_min_send_multiplier() -> f64 {
    0.5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Fill every unset option with its environment-dependent default. After
    /// this, `rounds` and `runs` are always `Some`.
    pub fn materialize(&mut self) {
        let (t, s) = match self.environment {
            EnvironmentChoice::Synthetic(_) => (30, 50),
            EnvironmentChoice::Replay(_) => (50, 20),
        };
        self.rounds.get_or_insert(t);
        self.runs.get_or_insert(s);
    }

    pub fn rounds(&self) -> usize {
        self.rounds.expect("config not materialized")
    }

    pub fn runs(&self) -> usize {
        self.runs.expect("config not materialized")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            message,
        };
        if self.rounds() == 0 {
            return Err(invalid("rounds", "must be >= 1".into()));
        }
        if self.runs() == 0 {
            return Err(invalid("runs", "must be >= 1".into()));
        }
        if self.logging_rounds == 0 {
            return Err(invalid("logging_rounds", "must be >= 1".into()));
        }
        if !(self.min_send_multiplier.is_finite() && self.min_send_multiplier >= 0.0) {
            return Err(invalid(
                "min_send_multiplier",
                format!("must be finite and >= 0, got {}", self.min_send_multiplier),
            ));
        }
        if self.policies.is_empty() {
            return Err(invalid("policies", "at least one policy is required".into()));
        }
        for (i, spec) in self.policies.iter().enumerate() {
            spec.validate()
                .map_err(|e| invalid(&format!("policies[{i}]"), e.to_string()))?;
        }
        match &self.environment {
            EnvironmentChoice::Synthetic(cfg) => cfg
                .validate()
                .map_err(|e| invalid("environment.synthetic", e.to_string()))?,
            EnvironmentChoice::Replay(src) => {
                if src.path.as_os_str().is_empty() {
                    return Err(invalid("environment.replay.path", "must not be empty".into()));
                }
                src.config
                    .validate()
                    .map_err(|e| invalid("environment.replay.config", e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Deserialize `text` tracking the JSON path of any failure.
pub fn from_json_str<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Parse, default-fill, and validate an experiment config file.
pub fn parse_experiment_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig = from_json_str(&read_to_string(path)?)?;
    config.materialize();
    config.validate()?;
    Ok(config)
}

/// Parse and validate an ablation study config file.
pub fn parse_ablation_config(path: &Path) -> Result<AblationConfig, ConfigError> {
    let config: AblationConfig = from_json_str(&read_to_string(path)?)?;
    config.validate().map_err(|e| ConfigError::Invalid {
        field: "ablation".into(),
        message: e.to_string(),
    })?;
    Ok(config)
}
