use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use itergp::gp::Backend;
use itergp::kernels::HyperParams;
use itergp::optimizers::{OptimizerConfig, StopReason};

use crate::dataset::Dataset;
use crate::error::{BenchError, Result};
use crate::split::Standardization;

pub const FORMAT: &str = "itergp-checkpoint";
pub const VERSION: u32 = 1;

/// Identifies the data a checkpoint was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub name: String,
    pub path: Option<PathBuf>,
    pub target: String,
    pub fingerprint: Option<u64>,
    pub rows: usize,
    pub columns: usize,
}

impl DataRef {
    pub fn of(ds: &Dataset, target: &str) -> Self {
        Self {
            name: ds.name.clone(),
            path: ds.provenance.path.clone(),
            target: target.to_string(),
            fingerprint: ds.provenance.fingerprint,
            rows: ds.len(),
            columns: ds.dim(),
        }
    }

    /// Whether `ds` looks like the dataset this reference was taken from.
    pub fn matches(&self, ds: &Dataset) -> bool {
        self.rows == ds.len()
            && self.columns == ds.dim()
            && (self.fingerprint.is_none() || self.fingerprint == ds.provenance.fingerprint)
    }
}

/// A trained model: raw hyperparameters, the settings it was trained with,
/// the standardization statistics, and enough of the split recipe to
/// rebuild its training and test rows from the original file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyperparams: HyperParams,
    pub backend: Backend,
    pub optimizer: OptimizerConfig,
    pub stats: Standardization,
    pub data: DataRef,
    pub seed: u64,
    pub split: usize,
    pub train_frac: f64,
    pub subsample: usize,
    pub train_mll: f64,
    pub grad_evals: usize,
    pub stop_reason: Option<StopReason>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(BenchError::json(path))?;
        std::fs::write(path, text + "\n").map_err(BenchError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(BenchError::json(path))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(BenchError::contract(format!("{} is not a checkpoint", path.display())));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(VERSION as u64) {
            return Err(BenchError::contract(format!(
                "{}: unsupported checkpoint version {version:?}",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(BenchError::json(path))
    }
}
