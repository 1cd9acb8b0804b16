//! Experiment configuration: strict JSON with documented defaults.

use std::path::{Path, PathBuf};

use fedact_core::baselines::SolverConfig;
use fedact_core::federation::FederationConfig;
use fedact_core::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Fl,
    Ista,
    Fista,
    Amp,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::Fl, Detector::Ista, Detector::Fista, Detector::Amp];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Fl => "fl",
            Detector::Ista => "ista",
            Detector::Fista => "fista",
            Detector::Amp => "amp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s.trim())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cellfree,
    Colocated,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cellfree => "cellfree",
            Architecture::Colocated => "colocated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cellfree" => Some(Architecture::Cellfree),
            "colocated" => Some(Architecture::Colocated),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    RocCsv,
    SummaryJson,
    HistoryCsv,
    Checkpoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub federation: FederationConfig,
    pub solver: SolverConfig,
    pub detectors: Vec<Detector>,
    pub architecture: Architecture,
    pub eval_trials: usize,
    pub output_dir: PathBuf,
    pub emit: Vec<Emit>,
    /// Maximum number of thresholds written per ROC curve.
    pub roc_points: usize,
    /// Write measured wall-clock times into the summary. Off by default so
    /// repeated runs produce identical bytes.
    pub record_runtime: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            federation: FederationConfig::default(),
            solver: SolverConfig::default(),
            detectors: Detector::ALL.to_vec(),
            architecture: Architecture::Cellfree,
            eval_trials: 1000,
            output_dir: PathBuf::from("results"),
            emit: vec![Emit::RocCsv, Emit::SummaryJson, Emit::HistoryCsv],
            roc_points: 1000,
            record_runtime: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let scoped = |scope: &str, e: fedact_core::Error| match e {
            fedact_core::Error::InvalidConfig { key, reason } => ConfigError::Invalid {
                key: format!("{scope}.{key}"),
                reason,
            },
            other => ConfigError::Invalid {
                key: scope.to_string(),
                reason: other.to_string(),
            },
        };
        self.scenario.validate().map_err(|e| scoped("scenario", e))?;
        self.federation.validate().map_err(|e| scoped("federation", e))?;
        self.solver.validate().map_err(|e| scoped("solver", e))?;
        let invalid = |key: &str, reason: &str| ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        };
        if self.detectors.is_empty() {
            return Err(invalid("detectors", "at least one detector is required"));
        }
        if self.eval_trials < 1 {
            return Err(invalid("eval_trials", "must be at least 1"));
        }
        if self.roc_points < 2 {
            return Err(invalid("roc_points", "must be at least 2"));
        }
        Ok(())
    }

    /// Detectors deduplicated in canonical order.
    pub fn detector_set(&self) -> Vec<Detector> {
        let mut d = self.detectors.clone();
        d.sort();
        d.dedup();
        d
    }

    pub fn emits(&self, what: Emit) -> bool {
        self.emit.contains(&what)
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}
