use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create_dir, write_json, DatasetKind, ExperimentConfig};
use crate::data::{
    apply_filter, ingest_mobiact, ingest_sisfall, ingest_upfall, read_window_cache, segment,
    stratified_split, synth_imbalanced, write_window_cache, Ingested, Provenance, RawRecording,
    Scaler, WindowSet,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub windows: usize,
    pub negatives: usize,
    pub positives: usize,
}

impl SplitSummary {
    fn of(ws: &WindowSet) -> Self {
        let (negatives, positives) = ws.class_counts();
        SplitSummary {
            windows: ws.len(),
            negatives,
            positives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub dataset: String,
    pub config_hash: String,
    pub window_len: usize,
    pub step: usize,
    pub channels: usize,
    pub total: SplitSummary,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub recordings: usize,
    /// recordings shorter than one window, excluded
    pub short_recordings: usize,
    pub ingest_errors: Vec<String>,
}

/// Hash of everything that determines the cached windows.
fn data_hash(cfg: &ExperimentConfig) -> String {
    let key = serde_json::json!({
        "dataset": cfg.dataset,
        "synthetic": cfg.synthetic,
        "data_root": cfg.data_root,
        "preprocess": cfg.preprocess,
    });
    crate::data::short_hash(key.to_string().as_bytes())
}

pub fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .join("cache")
        .join(format!("{}-{}", cfg.dataset.as_str(), data_hash(cfg)))
}

fn load_recordings(cfg: &ExperimentConfig) -> Result<(Vec<RawRecording>, Vec<String>)> {
    let root = cfg.resolve_data_root()?;
    if !root.exists() {
        return Err(Error::Missing(format!(
            "dataset path {} does not exist",
            root.display()
        )));
    }
    let issues = |ing: Ingested| {
        let errors = ing
            .errors
            .iter()
            .map(|e| format!("{}: {}", e.path.display(), e.reason))
            .collect();
        (ing.recordings, errors)
    };
    Ok(match cfg.dataset {
        DatasetKind::Sisfall => issues(ingest_sisfall(&root)?),
        DatasetKind::Mobiact => issues(ingest_mobiact(&root)?),
        DatasetKind::Upfall => (vec![ingest_upfall(&root)?.into_labelled()], Vec::new()),
        DatasetKind::Synthetic => unreachable!("synthetic data is generated"),
    })
}

/// Windows of the whole dataset, before splitting and scaling.
fn build_windows(
    cfg: &ExperimentConfig,
    provenance: &Provenance,
) -> Result<(WindowSet, usize, usize, Vec<String>)> {
    let pp = &cfg.preprocess;
    if cfg.dataset == DatasetKind::Synthetic {
        let syn = cfg
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::param("missing 'synthetic' section"))?;
        let mut ws = synth_imbalanced(
            syn.n,
            syn.fall_fraction,
            pp.window_len,
            syn.channels,
            syn.seed,
        )?;
        ws.provenance = provenance.clone();
        return Ok((ws, 0, 0, Vec::new()));
    }
    let (recordings, errors) = load_recordings(cfg)?;
    let count = recordings.len();
    let mut short = 0;
    let mut sets = Vec::new();
    for rec in &recordings {
        if rec.len() < pp.window_len {
            short += 1;
            continue;
        }
        let rec = match &pp.filter {
            Some(f) => apply_filter(rec, f)?,
            None => rec.clone(),
        };
        sets.push(segment(&rec, pp.window_len, pp.step, pp.label_rule)?);
    }
    if sets.is_empty() {
        return Err(Error::Missing(format!(
            "no recording of {} is long enough for one window",
            cfg.dataset.as_str()
        )));
    }
    Ok((
        WindowSet::concat(&sets, provenance.clone())?,
        count,
        short,
        errors,
    ))
}

/// Builds, splits and standardizes the windows and writes the caches.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<PreprocessSummary> {
    let pp = &cfg.preprocess;
    let provenance = Provenance {
        dataset: cfg.dataset.as_str().to_string(),
        config_hash: data_hash(cfg),
    };
    let (all, recordings, short_recordings, ingest_errors) = build_windows(cfg, &provenance)?;
    let (mut train, mut test) = stratified_split(&all, pp.train_fraction, pp.seed)?;
    let scaler = if pp.normalize {
        let s = Scaler::fit_windows(&train.windows)?;
        train.windows = s.transform_windows(&train.windows)?;
        test.windows = s.transform_windows(&test.windows)?;
        Some(s)
    } else {
        None
    };
    let dir = cache_dir(cfg);
    create_dir(&dir)?;
    write_window_cache(&dir.join("train.bin"), &train, scaler.as_ref())?;
    write_window_cache(&dir.join("test.bin"), &test, scaler.as_ref())?;
    let summary = PreprocessSummary {
        dataset: provenance.dataset,
        config_hash: provenance.config_hash,
        window_len: pp.window_len,
        step: pp.step,
        channels: all.channels(),
        total: SplitSummary::of(&all),
        train: SplitSummary::of(&train),
        test: SplitSummary::of(&test),
        recordings,
        short_recordings,
        ingest_errors,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn read_cache(path: &Path) -> Result<WindowSet> {
    if !path.exists() {
        return Err(Error::Missing(format!(
            "{} not found; run `caadp preprocess` with this config first",
            path.display()
        )));
    }
    Ok(read_window_cache(path)?.0)
}

/// The cached `(train, test)` windows of a config.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(WindowSet, WindowSet)> {
    let dir = cache_dir(cfg);
    Ok((
        read_cache(&dir.join("train.bin"))?,
        read_cache(&dir.join("test.bin"))?,
    ))
}
