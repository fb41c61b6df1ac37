//! Readers for the SisFall, UP-Fall and MobiAct on-disk layouts.
//!
//! Directory readers never abort on a bad file: problems are collected in
//! [`Ingested::errors`] and the remaining files are still returned, always
//! in lexicographic path order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use walkdir::WalkDir;

use super::RawRecording;
use crate::error::{Error, Result};

/// MobiAct activity folders holding fall recordings.
pub const MOBIACT_FALL_FOLDERS: [&str; 6] = ["FOL", "FKL", "FKR", "SDL", "SDR", "BSC"];

const UPFALL_FEATURES: usize = 18;
const UPFALL_LABEL_NAMES: [&str; 4] = ["label", "activity", "tag", "class"];
const MOBIACT_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestIssue {
    pub path: PathBuf,
    pub reason: String,
}

/// Recordings read from a directory plus the files that were skipped.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub recordings: Vec<RawRecording>,
    pub errors: Vec<IngestIssue>,
}

/// A UP-Fall table: 18 feature channels and the raw per-row activity label.
#[derive(Debug, Clone)]
pub struct UpFallData {
    pub recording: RawRecording,
    pub labels: Vec<i64>,
}

impl UpFallData {
    /// Attaches binary row labels to the recording.
    pub fn into_labelled(self) -> RawRecording {
        let rows = self
            .labels
            .iter()
            .map(|&l| upfall_binary_label(l))
            .collect();
        RawRecording {
            row_labels: Some(rows),
            ..self.recording
        }
    }
}

/// Activities 1 through 5 are falls.
pub fn upfall_binary_label(label: i64) -> u8 {
    u8::from((1..=5).contains(&label))
}

fn sorted_files(root: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(ext))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_field(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a SisFall-style text file. Fields are separated by whitespace,
/// commas or semicolons; rows without any numeric field are skipped.
fn read_sisfall_file(path: &Path) -> std::result::Result<RawRecording, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<Option<f64>>> = text
        .lines()
        .map(|line| {
            line.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
                .filter(|t| !t.is_empty())
                .map(parse_field)
                .collect::<Vec<_>>()
        })
        .filter(|row: &Vec<Option<f64>>| row.iter().any(Option::is_some))
        .collect();
    if rows.is_empty() {
        return Err("no numeric rows".into());
    }
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    // a column survives only if every row has a value in it
    let mut keep: Vec<usize> = (0..width)
        .filter(|&c| rows.iter().all(|r| r.get(c).copied().flatten().is_some()))
        .collect();
    if keep.len() == 7 {
        keep.remove(0);
    }
    if keep.is_empty() {
        return Err("every column has missing values".into());
    }
    let samples = Array2::from_shape_fn((rows.len(), keep.len()), |(r, c)| {
        rows[r][keep[c]].expect("kept columns are complete")
    });
    Ok(RawRecording {
        samples,
        channel_names: keep.iter().map(|c| format!("col{c}")).collect(),
        sample_rate_hz: None,
        source_label: stem(path),
        row_labels: None,
    })
}

/// Reads every `.txt` file below `root` (subject directories are walked
/// recursively). Seven-column files lose their leading time column.
pub fn ingest_sisfall(root: &Path) -> Result<Ingested> {
    let mut out = Ingested::default();
    for path in sorted_files(root, "txt")? {
        match read_sisfall_file(&path) {
            Ok(rec) => out.recordings.push(rec),
            Err(reason) => out.errors.push(IngestIssue { path, reason }),
        }
    }
    Ok(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Reads a UP-Fall `CompleteDataSet.csv`-style table.
///
/// The label column is located by header name (`label`, `activity`, `tag`
/// or `class`, first match in that priority). A leading column whose header
/// mentions time is skipped, and the next 18 non-label columns are the
/// features. Rows with an unusable label or with no numeric feature are
/// dropped; isolated missing features are forward-filled from the previous
/// kept row.
pub fn ingest_upfall(csv_path: &Path) -> Result<UpFallData> {
    let fatal = |reason: String| Error::Ingest {
        path: csv_path.to_path_buf(),
        reason,
    };
    let mut reader = csv_reader(csv_path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(fatal(e.to_string())),
        None => return Err(fatal("empty file".into())),
    };
    let names: Vec<String> = header
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let label_col = UPFALL_LABEL_NAMES
        .iter()
        .find_map(|want| names.iter().position(|n| n == want))
        .ok_or_else(|| fatal("missing label column".into()))?;
    let skip_time = names.first().is_some_and(|n| n.contains("time")) && label_col != 0;
    let feature_cols: Vec<usize> = (usize::from(skip_time)..names.len())
        .filter(|&c| c != label_col)
        .take(UPFALL_FEATURES)
        .collect();
    if feature_cols.len() < UPFALL_FEATURES {
        return Err(fatal(format!(
            "need {UPFALL_FEATURES} feature columns, found {}",
            feature_cols.len()
        )));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for rec in records {
        let rec = rec.map_err(|e| fatal(e.to_string()))?;
        let Some(label) = rec
            .get(label_col)
            .and_then(parse_field)
            .filter(|v| v.fract() == 0.0)
        else {
            continue;
        };
        let row: Vec<Option<f64>> = feature_cols
            .iter()
            .map(|&c| rec.get(c).and_then(parse_field))
            .collect();
        if row.iter().all(Option::is_none) {
            continue;
        }
        let filled: Option<Vec<f64>> = row
            .iter()
            .enumerate()
            .map(|(i, v)| v.or_else(|| prev.as_ref().map(|p| p[i])))
            .collect();
        let Some(filled) = filled else {
            continue;
        };
        values.extend_from_slice(&filled);
        labels.push(label as i64);
        prev = Some(filled);
    }
    if labels.is_empty() {
        return Err(fatal("no numeric rows".into()));
    }
    let samples = Array2::from_shape_vec((labels.len(), UPFALL_FEATURES), values)
        .expect("row width is fixed");
    Ok(UpFallData {
        recording: RawRecording {
            samples,
            channel_names: feature_cols
                .iter()
                .map(|&c| header[c].to_string())
                .collect(),
            sample_rate_hz: None,
            source_label: stem(csv_path),
            row_labels: None,
        },
        labels,
    })
}

fn read_mobiact_file(path: &Path, folder: &str) -> std::result::Result<RawRecording, String> {
    let mut reader = csv_reader(path).map_err(|e| e.to_string())?;
    let mut records = reader.records().peekable();
    let first = match records.peek() {
        Some(Ok(r)) => r.clone(),
        Some(Err(e)) => return Err(e.to_string()),
        None => return Err("empty file".into()),
    };
    if first.len() < MOBIACT_CHANNELS + 1 {
        return Err(format!(
            "expected at least {} columns, found {}",
            MOBIACT_CHANNELS + 1,
            first.len()
        ));
    }
    let is_header = (1..=MOBIACT_CHANNELS).any(|c| first.get(c).and_then(parse_field).is_none());
    let channel_names = if is_header {
        records.next();
        (1..=MOBIACT_CHANNELS)
            .map(|c| first[c].to_string())
            .collect()
    } else {
        (1..=MOBIACT_CHANNELS).map(|c| format!("col{c}")).collect()
    };
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| e.to_string())?;
        let row: Option<Vec<f64>> = (1..=MOBIACT_CHANNELS)
            .map(|c| rec.get(c).and_then(parse_field))
            .collect();
        if let Some(row) = row {
            values.extend(row);
        }
    }
    if values.is_empty() {
        return Err("no numeric rows".into());
    }
    let rows = values.len() / MOBIACT_CHANNELS;
    Ok(RawRecording {
        samples: Array2::from_shape_vec((rows, MOBIACT_CHANNELS), values)
            .expect("row width is fixed"),
        channel_names,
        sample_rate_hz: None,
        source_label: folder.to_string(),
        row_labels: None,
    })
}

/// Reads `root/<ACTIVITY>/*.csv`, keeping sensor columns 1..=6 of each file.
pub fn ingest_mobiact(root: &Path) -> Result<Ingested> {
    let mut out = Ingested::default();
    for path in sorted_files(root, "csv")? {
        let folder = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        match read_mobiact_file(&path, &folder) {
            Ok(rec) => out.recordings.push(rec),
            Err(reason) => out.errors.push(IngestIssue { path, reason }),
        }
    }
    Ok(out)
}
