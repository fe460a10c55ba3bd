use std::path::{Path, PathBuf};

use qadqn_core::network::NetworkConfig;
use qadqn_core::training::TrainConfig;
use qadqn_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run can tune. Missing keys take their defaults; unknown keys
/// are rejected. The seed and commission live in `train` and are shared by
/// every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// OHLC CSV used when a command is not given `--data`.
    pub data: Option<PathBuf>,
    /// Directory receiving every output file.
    pub out: PathBuf,
    pub initial_cash: f64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("out"),
            initial_cash: 10_000.0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if self.network.window < self.train.dual_thrust.lookback {
            return Err(Error::Config(format!(
                "window {} is shorter than the dual thrust lookback {}",
                self.network.window, self.train.dual_thrust.lookback
            )));
        }
        if !(self.initial_cash > 0.0) || !self.initial_cash.is_finite() {
            return Err(Error::Config("initial_cash must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}
