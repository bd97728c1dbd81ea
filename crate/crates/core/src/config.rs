//! Run configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::effects::EffectsConfig;
use crate::error::{Error, Result};
use crate::evaluate::EvalConfig;
use crate::forecast::{ForecastConfig, Method};
use crate::ingest::IngestOptions;
use crate::prep::PrepConfig;
use crate::report::ReportConfig;
use crate::segment::SegmentConfig;
use crate::synth::{PopulationConfig, RecoveryConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub methods: Vec<Method>,
    pub ingest: IngestOptions,
    pub prep: PrepConfig,
    pub forecast: ForecastConfig,
    pub effects: EffectsConfig,
    pub segment: SegmentConfig,
    pub report: ReportConfig,
    pub population: PopulationConfig,
    pub recovery: RecoveryConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            methods: Method::ALL.to_vec(),
            ingest: IngestOptions::default(),
            prep: PrepConfig::default(),
            forecast: ForecastConfig::default(),
            effects: EffectsConfig::default(),
            segment: SegmentConfig::default(),
            report: ReportConfig::default(),
            population: PopulationConfig::default(),
            recovery: RecoveryConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            forecast: self.forecast.clone(),
            effects: self.effects.clone(),
            report: self.report.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
