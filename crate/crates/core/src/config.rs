//! Experiment configuration file: TOML with one section per stage.
//!
//! ```toml
//! [features]
//! n_frames = 500
//!
//! [train]
//! lr = 0.0003
//! alpha = "auto"
//!
//! [tdcf]
//! p_spoof = 0.05
//! ```
//!
//! Missing sections and keys take their defaults, so `Config::default()`
//! rendered with [`Config::to_toml`] lists every tunable number.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::metrics::TdcfParams;
use crate::model::{ResNetConfig, TrainConfig};
use crate::replay::CorpusConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub features: FeatureConfig,
    /// Network topology. `input_bins` and `input_frames` are replaced by the
    /// dimensions of the training features.
    pub model: ResNetConfig,
    pub train: TrainConfig,
    pub tdcf: TdcfParams,
    pub corpus: CorpusConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::read)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.features.frame.validate()?;
        self.features.mgd.validate()?;
        self.train.validate()?;
        self.tdcf.validate()?;
        self.corpus.replay.validate(self.corpus.sample_rate)?;
        self.model.validate()
    }
}
