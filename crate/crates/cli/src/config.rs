//! Optional TOML configuration. Each subcommand reads its own table; keys
//! mirror the long flag names with dashes replaced by underscores.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::commands::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    #[serde(default)]
    pub build_dataset: BuildFile,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub evaluate: EvaluateFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildFile {
    pub out: Option<PathBuf>,
    pub n_train: Option<usize>,
    pub n_valid: Option<usize>,
    pub n_test: Option<usize>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub balance: Option<usize>,
    pub duration: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub manifest: Option<PathBuf>,
    pub mode: Option<String>,
    pub features: Option<String>,
    pub freeze_encoder: Option<bool>,
    pub steps: Option<u64>,
    pub warmup: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub lr_scratch: Option<f64>,
    pub lr_encoder: Option<f64>,
    pub dim: Option<usize>,
    pub heads: Option<usize>,
    pub positional: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateFile {
    pub ckpt: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<String>,
    pub mode: Option<String>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
