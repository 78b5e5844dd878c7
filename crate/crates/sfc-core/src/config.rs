//! One TOML document wiring the pipeline together: simulation, split
//! sizes, model hyperparameters, training settings. Every block and field
//! is optional and defaults to the reference setup; the digest of the
//! resolved config ties artifacts to the settings that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{SimulationConfig, SplitSizes};
use crate::digest::json_digest;
use crate::error::Result;
use crate::model::ModelHyper;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub simulation: SimulationConfig,
    pub dataset: SplitSizes,
    pub model: ModelHyper,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)?;
        AppConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<AppConfig> {
        let cfg: AppConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Digest of the resolved config (defaults filled in), so two files
    /// spelling the same settings differently agree.
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}
