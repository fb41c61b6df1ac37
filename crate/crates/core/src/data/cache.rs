//! WindowSet cache files.
//!
//! Binary layout, all little-endian:
//!
//! | bytes                  | content                                   |
//! |------------------------|-------------------------------------------|
//! | 8                      | `num_windows` as u64                      |
//! | 8                      | `window_len` as u64                       |
//! | 8                      | `channels` as u64                         |
//! | 4 · n · len · channels | window values as f32, row-major           |
//! | n                      | labels, one byte each                     |
//!
//! A JSON sidecar (`<file>.json`) carries provenance and scaler statistics.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{Provenance, Scaler, WindowSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub provenance: Provenance,
    pub num_windows: usize,
    pub window_len: usize,
    pub channels: usize,
    pub negatives: usize,
    pub positives: usize,
    pub scaler: Option<Scaler>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_window_cache(path: &Path, ws: &WindowSet, scaler: Option<&Scaler>) -> Result<()> {
    let (n, l, c) = ws.windows.dim();
    let mut bytes = Vec::with_capacity(24 + 4 * n * l * c + n);
    for dim in [n, l, c] {
        bytes.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for v in ws.windows.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(&ws.labels);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;

    let (negatives, positives) = ws.class_counts();
    let sidecar = CacheSidecar {
        provenance: ws.provenance.clone(),
        num_windows: n,
        window_len: l,
        channels: c,
        negatives,
        positives,
        scaler: scaler.cloned(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_window_cache(path: &Path) -> Result<(WindowSet, CacheSidecar)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 {
        return Err(bad("truncated header"));
    }
    let dim = |i: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[8 * i..8 * i + 8]);
        u64::from_le_bytes(b) as usize
    };
    let (n, l, c) = (dim(0), dim(1), dim(2));
    let values = n
        .checked_mul(l)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| bad("shape overflow"))?;
    if bytes.len() != 24 + 4 * values + n {
        return Err(bad("length does not match header"));
    }
    let data: Vec<f64> = bytes[24..24 + 4 * values]
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64)
        .collect();
    let labels = bytes[24 + 4 * values..].to_vec();
    let windows = Array3::from_shape_vec((n, l, c), data).map_err(|e| bad(&e.to_string()))?;

    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: CacheSidecar = serde_json::from_str(&text)?;
    if (sidecar.num_windows, sidecar.window_len, sidecar.channels) != (n, l, c) {
        return Err(bad("sidecar shape disagrees with binary header"));
    }
    let ws = WindowSet::new(windows, labels, sidecar.provenance.clone())?;
    Ok((ws, sidecar))
}
