use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use dgcn_core::bench::{ModelKind, Protocol};
use dgcn_core::timeseries::{ForecastMode, LagSpec};
use dgcn_core::trainer::TrainConfig;

use crate::CliError;

/// The JSON configuration file. Every section is optional and falls back to
/// the library defaults; the resolved document is echoed into run logs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub lags: LagSpec,
    /// Overrides both `train.seed` and `protocol.seed`.
    pub seed: Option<u64>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Applies the seed override; a flag beats the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
            self.protocol.seed = s;
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Dgcn,
    Stationary,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Dgcn => ModelKind::Dgcn,
            ModelArg::Stationary => ModelKind::Stationary,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Recursive,
    Direct,
}

impl From<ModeArg> for ForecastMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Recursive => ForecastMode::Recursive,
            ModeArg::Direct => ForecastMode::Direct,
        }
    }
}
