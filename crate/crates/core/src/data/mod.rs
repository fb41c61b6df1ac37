//! Sensor-data preprocessing: ingestion of the three public fall datasets,
//! a synthetic stand-in, zero-phase Butterworth filtering, standardization,
//! sliding-window segmentation and stratified splitting.
//!
//! The unit that leaves this module is a [`WindowSet`]: a stack of
//! fixed-length multichannel windows with binary labels (1 = fall).

mod cache;
mod filter;
mod ingest;
mod scaler;
mod split;
mod synth;
mod window;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::{read_window_cache, write_window_cache, CacheSidecar};
pub use filter::{
    apply_filter, butterworth_lowpass, design_butterworth_lowpass, filtfilt, Biquad,
    MAX_FILTER_ORDER,
};
pub use ingest::{
    ingest_mobiact, ingest_sisfall, ingest_upfall, upfall_binary_label, IngestIssue, Ingested,
    UpFallData, MOBIACT_FALL_FOLDERS,
};
pub use scaler::{standardize_matrix, Scaler, DEGENERATE_STD};
pub use split::{stratified_split, train_count};
pub use synth::{
    synth_imbalanced, SYNTH_BASELINE_AMPLITUDE, SYNTH_LEVEL_SHIFT, SYNTH_NOISE_STD,
    SYNTH_TRANSIENT_MAGNITUDE, SYNTH_TRANSIENT_WIDTH,
};
pub use window::{segment, window_count, window_label_mode};

/// One continuous multichannel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    /// time × channels
    pub samples: Array2<f64>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: Option<f64>,
    /// File stem or activity-folder name, depending on the dataset.
    pub source_label: String,
    /// Per-row binary labels, present only for row-labelled datasets.
    pub row_labels: Option<Vec<u8>>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }
}

/// How window labels are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Whole recording is a fall iff its source label starts with `F`.
    FilePrefixF,
    /// Row labels 1..=5 are falls; each window takes the mode of its rows.
    LabelRange1to5,
    /// Whole recording is a fall iff its activity folder is a fall folder.
    FolderNameSet,
}

impl LabelRule {
    /// Recording-level label, `None` for row-labelled rules.
    pub fn file_label(self, source_label: &str) -> Option<u8> {
        match self {
            LabelRule::FilePrefixF => Some(u8::from(source_label.starts_with('F'))),
            LabelRule::FolderNameSet => Some(u8::from(
                MOBIACT_FALL_FOLDERS
                    .iter()
                    .any(|f| f.eq_ignore_ascii_case(source_label)),
            )),
            LabelRule::LabelRange1to5 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    #[serde(default = "default_true")]
    pub zero_phase: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window_len: usize,
    pub step: usize,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub label_rule: LabelRule,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl PreprocessConfig {
    /// Table-1 style preset for SisFall: 4th-order 20 Hz low-pass at 200 Hz,
    /// 200-sample windows with a 100-sample step.
    pub fn sisfall() -> Self {
        PreprocessConfig {
            window_len: 200,
            step: 100,
            filter: Some(FilterConfig {
                order: 4,
                cutoff_hz: 20.0,
                sample_rate_hz: 200.0,
                zero_phase: true,
            }),
            normalize: true,
            label_rule: LabelRule::FilePrefixF,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn upfall() -> Self {
        PreprocessConfig {
            window_len: 50,
            step: 25,
            filter: None,
            normalize: true,
            label_rule: LabelRule::LabelRange1to5,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn mobiact() -> Self {
        PreprocessConfig {
            window_len: 128,
            step: 64,
            filter: None,
            normalize: true,
            label_rule: LabelRule::FolderNameSet,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.step == 0 {
            return Err(Error::param("window_len and step must be positive"));
        }
        if self.step > self.window_len {
            return Err(Error::param(format!(
                "step {} exceeds window_len {}",
                self.step, self.window_len
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param("train_fraction must lie in (0, 1)"));
        }
        if let Some(f) = &self.filter {
            filter::check_filter_params(f.order, f.cutoff_hz, f.sample_rate_hz)?;
        }
        Ok(())
    }

    /// Short content hash used in provenance records.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        short_hash(json.as_bytes())
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub dataset: String,
    pub config_hash: String,
}

/// Stack of equally shaped windows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// num_windows × window_len × channels
    pub windows: Array3<f64>,
    /// 1 = fall, 0 = ADL
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl WindowSet {
    pub fn new(windows: Array3<f64>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if windows.len_of(Axis(0)) != labels.len() {
            return Err(Error::shape(format!(
                "{} windows but {} labels",
                windows.len_of(Axis(0)),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::param("labels must be 0 or 1"));
        }
        if windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window data".into()));
        }
        Ok(WindowSet {
            windows,
            labels,
            provenance,
        })
    }

    pub fn empty(window_len: usize, channels: usize, provenance: Provenance) -> Self {
        WindowSet {
            windows: Array3::zeros((0, window_len, channels)),
            labels: Vec::new(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.len_of(Axis(1))
    }

    pub fn channels(&self) -> usize {
        self.windows.len_of(Axis(2))
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    /// Windows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        WindowSet {
            windows: self.windows.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Concatenates sets with identical window geometry.
    pub fn concat(sets: &[WindowSet], provenance: Provenance) -> Result<WindowSet> {
        let Some(first) = sets.first() else {
            return Err(Error::param("nothing to concatenate"));
        };
        let (l, c) = (first.window_len(), first.channels());
        if let Some(bad) = sets
            .iter()
            .find(|s| s.window_len() != l || s.channels() != c)
        {
            return Err(Error::shape(format!(
                "window geometry {}x{} differs from {l}x{c}",
                bad.window_len(),
                bad.channels()
            )));
        }
        let views: Vec<_> = sets.iter().map(|s| s.windows.view()).collect();
        let windows =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        let labels = sets.iter().flat_map(|s| s.labels.iter().copied()).collect();
        Ok(WindowSet {
            windows,
            labels,
            provenance,
        })
    }
}
