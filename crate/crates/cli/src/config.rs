//! Scenario files.
//!
//! A scenario file holds a `[scenario]` table (the simulator settings) and
//! an optional `[policy]` table. TOML is the default format; files ending
//! in `.json` are read as JSON with the same layout. Unknown keys are
//! rejected everywhere.

use std::path::Path;

use riskcost_core::{CostParameters, PolicyConfig, Scenario};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
}

/// Policy used when a scenario file has no `[policy]` table.
pub fn default_policy() -> PolicyConfig {
    PolicyConfig::new(CostParameters::new(100.0, 10.0, 1.0, 0.0).expect("valid defaults"))
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate().map_err(|e| ConfigError::Invalid {
            field: format!("scenario.{}", e.field),
            message: e.message,
        })?;
        self.policy.validate().map_err(|e| ConfigError::Invalid {
            field: "policy".into(),
            message: e.to_string(),
        })
    }
}

pub fn parse_toml(text: &str) -> Result<ScenarioFile, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub fn parse_json(text: &str) -> Result<ScenarioFile, ConfigError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_json(&text)
    } else {
        parse_toml(&text)
    }
}

pub fn write_scenario(file: &ScenarioFile) -> Result<String, ConfigError> {
    toml::to_string(file).map_err(|e| ConfigError::Parse(e.to_string()))
}
