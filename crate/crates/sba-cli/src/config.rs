//! Experiment configuration: a JSON document with a `schema_version`
//! field describing the game, the two populations, the training block,
//! and the seed sweep.

use crate::error::{CliError, CliResult};
use sba_core::learner::TrainConfig;
use sba_core::lever::{make_deterministic_population, LeverGameConfig};
use sba_core::population::{deserialize_population, Population};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A population given inline as lever indices or as a path to a
/// population file (resolved relative to the config file's directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PopSource {
    Levers { levers: Vec<usize> },
    Path { path: PathBuf },
}

impl PopSource {
    pub fn resolve(
        &self,
        name: &str,
        env: &LeverGameConfig,
        base_dir: &Path,
    ) -> CliResult<Population> {
        match self {
            PopSource::Levers { levers } => {
                make_deterministic_population(name, levers, env).map_err(CliError::validation)
            }
            PopSource::Path { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    CliError::Validation(format!("cannot read population {}: {e}", full.display()))
                })?;
                deserialize_population(&text).map_err(CliError::validation)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: LeverGameConfig,
    pub train_pop: PopSource,
    pub eval_pop: PopSource,
    pub train: TrainConfig,
    pub sba: bool,
    pub augment_eval: Option<bool>,
    pub num_seeds: usize,
    pub root_seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// The reference lever experiment: 10 levers, two rounds, training on
    /// levers 0-4, evaluating on all ten, 30 seeds.
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            env: LeverGameConfig::default(),
            train_pop: PopSource::Levers {
                levers: vec![0, 1, 2, 3, 4],
            },
            eval_pop: PopSource::Levers {
                levers: (0..10).collect(),
            },
            train: TrainConfig::default(),
            sba: false,
            augment_eval: None,
            num_seeds: 30,
            root_seed: 1234,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.env.validate().map_err(CliError::validation)?;
        self.train.validate().map_err(CliError::validation)?;
        if self.num_seeds < 1 {
            return Err(CliError::Validation("num_seeds must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("malformed config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical serialization for config echoes in output trees.
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serialization");
        text.push('\n');
        text
    }
}
