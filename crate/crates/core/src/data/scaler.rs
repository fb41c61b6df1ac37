use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels with a standard deviation below this are only centered.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Per-channel standardization statistics (population convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on a `rows × channels` matrix.
    pub fn fit_matrix(data: &Array2<f64>) -> Result<Scaler> {
        let rows = data.nrows();
        if rows < 2 {
            return Err(Error::param(
                "standardization needs at least 2 samples per channel",
            ));
        }
        let n = rows as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s < DEGENERATE_STD { 1.0 } else { s });
        }
        Ok(Scaler { mean, std })
    }

    /// Fits on every time step of every window.
    pub fn fit_windows(windows: &Array3<f64>) -> Result<Scaler> {
        let (n, l, c) = windows.dim();
        let flat = windows
            .to_shape((n * l, c))
            .map_err(|e| Error::shape(e.to_string()))?
            .to_owned();
        Self::fit_matrix(&flat)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_matrix(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.clone();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[c]) / self.std[c]);
        }
        Ok(out)
    }

    pub fn transform_windows(&self, windows: &Array3<f64>) -> Result<Array3<f64>> {
        self.check(windows.len_of(Axis(2)))?;
        let mut out = windows.clone();
        for (c, mut lane) in out.axis_iter_mut(Axis(2)).enumerate() {
            lane.mapv_inplace(|v| (v - self.mean[c]) / self.std[c]);
        }
        Ok(out)
    }

    fn check(&self, channels: usize) -> Result<()> {
        if channels != self.channels() {
            return Err(Error::shape(format!(
                "scaler fitted on {} channels, data has {channels}",
                self.channels()
            )));
        }
        Ok(())
    }
}

/// Fits and applies in one go; returns the standardized copy and its stats.
pub fn standardize_matrix(data: &Array2<f64>) -> Result<(Array2<f64>, Scaler)> {
    let scaler = Scaler::fit_matrix(data)?;
    let out = scaler.transform_matrix(data)?;
    Ok((out, scaler))
}
