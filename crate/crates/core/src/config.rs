//! Run configuration: a TOML file plus command-line overrides, with the
//! flags winning over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowSchema, NormMethod, SplitFractions};
use crate::train::TrainConfig;

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_split() -> SplitFractions {
    SplitFractions::standard()
}

fn default_norm() -> NormMethod {
    NormMethod::Zscore
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed: drives the split, IP remapping, and single-run training.
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    /// None means the synthetic f0..f{d-1} schema, inferred from the header.
    pub schema: Option<FlowSchema>,
    pub normalize: NormMethod,
    pub remap: bool,
    pub split: SplitFractions,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            input: None,
            out: default_out(),
            schema: None,
            normalize: default_norm(),
            remap: default_true(),
            split: default_split(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        config.train.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }
}

/// CLI flag values; `None` leaves the file/default value untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_mixup: bool,
    pub no_contrastive: bool,
    pub theta: Option<f64>,
    pub sigma: Option<usize>,
    pub gamma: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub fraction: Option<f64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.no_mixup {
            config.train.enable_mixup = false;
        }
        if self.no_contrastive {
            config.train.enable_contrastive = false;
        }
        if let Some(theta) = self.theta {
            config.train.contrastive.theta = theta;
        }
        if let Some(sigma) = self.sigma {
            config.train.mixup.sigma = sigma;
        }
        if let Some(gamma) = self.gamma {
            config.train.contrastive.gamma = gamma;
        }
        if let Some(alpha) = self.alpha {
            config.train.mixup.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            config.train.mixup.beta = beta;
        }
        if let Some(fraction) = self.fraction {
            config.train.train_fraction = fraction;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(input) = &self.input {
            config.input = Some(input.clone());
        }
    }
}

/// Resolves the effective config: defaults, then file, then flags.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match file {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.train.validate()?;
    Ok(config)
}
