use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sigma_core::data::TrainRows;
use sigma_core::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub min_count: usize,
    pub cap: Option<usize>,
    pub max_len: usize,
    pub train_rows: TrainRows,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_count: 5,
            cap: None,
            max_len: 50,
            train_rows: TrainRows::Last,
        }
    }
}

/// Everything a run needs. Written back fully resolved next to the outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Independent training runs with seeds `seed, seed+1, ...`.
    pub runs: usize,
}

impl RunConfig {
    /// TOML or JSON, chosen by extension.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(anyhow::Error::from),
            Some("toml") => toml::from_str(&text).map_err(anyhow::Error::from),
            _ => bail!("config must be .toml or .json: {}", path.display()),
        };
        cfg.map_err(|e| sigma_core::Error::Config(format!("{}: {e}", path.display())).into())
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        cfg.runs = cfg.runs.max(1);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
