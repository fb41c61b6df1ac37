//! Experiment orchestration behind the `caadp` command-line tool.
//!
//! Every verb reads a JSON [`ExperimentConfig`] and writes under its
//! `output_dir`:
//!
//! ```text
//! <output_dir>/cache/<dataset>-<hash>/{train,test}.bin(.json), summary.json
//! <output_dir>/results_<name>.csv
//! <output_dir>/runs/<name>-seed<k>/{metrics.json, ledger.json, trace.csv, checkpoint.bin}
//! <output_dir>/sweep_<name>.csv, sweep_curve_<name>.csv
//! ```
//!
//! Relative paths in a config resolve against the working directory.

mod compare;
mod preprocess;
mod report;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PreprocessConfig;
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};

pub use compare::{cmd_compare, read_results_sets};
pub use preprocess::{cache_dir, cmd_preprocess, load_splits, PreprocessSummary, SplitSummary};
pub use report::{cmd_report, ReportOutcome, ReportRow};
pub use run::{cmd_sweep, cmd_train, ResultRow, RunRecord, SweepConfig, SweepOutcome};

/// Names the dataset root when a config gives no `data_root`.
pub const DATA_ROOT_ENV: &str = "CAADP_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Sisfall,
    Upfall,
    Mobiact,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Sisfall => "sisfall",
            DatasetKind::Upfall => "upfall",
            DatasetKind::Mobiact => "mobiact",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub fall_fraction: f64,
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    60
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_validation_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// model identifier used in file names and result rows
    pub name: String,
    pub dataset: DatasetKind,
    /// SisFall and MobiAct: directory; UP-Fall: CSV file
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    pub preprocess: PreprocessConfig,
    pub model: ModelSpec,
    pub dp: DpConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// defaults to 0.05, or 0.01 for the hybrid model
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// share of the training split held out for early stopping
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::param(format!(
                "invalid experiment name '{}'",
                self.name
            )));
        }
        self.preprocess.validate()?;
        self.model.validate()?;
        self.dp.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::param("seeds must not be empty"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation_fraction must lie in (0, 1)"));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::param(format!("eta {eta} must be > 0")));
            }
        }
        if self.dataset == DatasetKind::Synthetic && self.synthetic.is_none() {
            return Err(Error::param(
                "synthetic dataset needs a 'synthetic' section",
            ));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta.unwrap_or(match self.model.kind {
            ModelKind::CnnBilstm => 0.01,
            ModelKind::Logistic | ModelKind::Mlp => 0.05,
        })
    }

    /// Applies `--seed` and `--out` overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<&Path>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.output_dir = o.to_path_buf();
        }
        self
    }

    /// The configured dataset location, or the one under the root named by
    /// [`DATA_ROOT_ENV`].
    pub fn resolve_data_root(&self) -> Result<PathBuf> {
        if let Some(p) = &self.data_root {
            return Ok(p.clone());
        }
        let root = std::env::var_os(DATA_ROOT_ENV).ok_or_else(|| {
            Error::Missing(format!(
                "{} needs data_root in the config or {DATA_ROOT_ENV} in the environment",
                self.dataset.as_str()
            ))
        })?;
        let root = PathBuf::from(root);
        Ok(match self.dataset {
            DatasetKind::Upfall => root.join("upfall.csv"),
            other => root.join(other.as_str()),
        })
    }
}

/// Reads a text input, reporting an absent file as a missing input.
pub(crate) fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(format!("{} does not exist", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Process exit status for an error: 1 configuration or other failure,
/// 2 missing input, 3 shape mismatch, 4 schema mismatch.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Missing(_) => 2,
        Error::Shape(_) => 3,
        Error::Schema(_) => 4,
        _ => 1,
    }
}
