//! Per-subcommand configuration documents. Each is read from an optional JSON
//! file, then overridden field by field from the command line; the merged
//! value is echoed in the output with every default filled in.

use crate::error::{CliError, CliResult};
use hetdetect_core::{LossModel, SplitMode, WeightPreset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestConfig {
    /// Block manifest path.
    pub blocks: Option<PathBuf>,
    pub model: LossModel,
    pub alpha: f64,
    pub gamma: f64,
    pub weight: WeightPreset,
    pub split: SplitMode,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            blocks: None,
            model: LossModel::Linear,
            alpha: 0.05,
            gamma: 2.0 / 3.0,
            weight: WeightPreset::Theory,
            split: SplitMode::Prefix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerCalcConfig {
    pub k: usize,
    pub n: usize,
    pub beta: f64,
    pub c: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Smallest and largest per-block standard deviation; both default to
    /// `sigma`.
    pub sigma_minus: Option<f64>,
    pub sigma_plus: Option<f64>,
}

impl Default for PowerCalcConfig {
    fn default() -> Self {
        Self {
            k: 100,
            n: 500,
            beta: 0.5,
            c: 1.0,
            sigma: 1.0,
            gamma: 2.0 / 3.0,
            sigma_minus: None,
            sigma_plus: None,
        }
    }
}

impl PowerCalcConfig {
    pub fn materialize(&mut self) {
        self.sigma_minus.get_or_insert(self.sigma);
        self.sigma_plus.get_or_insert(self.sigma);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaOptConfig {
    pub n: usize,
    pub mu: f64,
    pub k: usize,
}

impl Default for GammaOptConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            mu: 0.5,
            k: 100,
        }
    }
}

/// Reads a configuration document, or returns the defaults without a path.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}
