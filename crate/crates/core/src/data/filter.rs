//! Butterworth low-pass design and zero-phase application.
//!
//! The analog prototype has its poles evenly spaced on the left half of the
//! unit circle. The cutoff is pre-warped with `tan(pi * fc / fs)` so the
//! bilinear transform lands the -3 dB point exactly on `fc`. Conjugate pole
//! pairs become biquads; an odd order adds one first-order section.

use std::f64::consts::PI;

use ndarray::Array2;

use super::{FilterConfig, RawRecording};
use crate::error::{Error, Result};

/// Highest order accepted; beyond this the cascade loses accuracy.
pub const MAX_FILTER_ORDER: usize = 16;

/// One second-order section in direct form II transposed.
///
/// `a0` is normalized to 1. First-order sections have `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// DF2T state that makes a constant input `x` produce a constant output
    /// from the first sample on.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = x * self.dc_gain();
        let z2 = self.b2 * x - self.a2 * y;
        let z1 = self.b1 * x - self.a1 * y + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    fn run(&self, signal: &mut [f64], mut state: [f64; 2]) {
        for v in signal.iter_mut() {
            let x = *v;
            let y = self.b0 * x + state[0];
            state[0] = self.b1 * x - self.a1 * y + state[1];
            state[1] = self.b2 * x - self.a2 * y;
            *v = y;
        }
    }
}

pub(crate) fn check_filter_params(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<()> {
    if order == 0 || order > MAX_FILTER_ORDER {
        return Err(Error::param(format!(
            "filter order must be in 1..={MAX_FILTER_ORDER}, got {order}"
        )));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::param("sample rate must be positive"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::param(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            sample_rate_hz / 2.0
        )));
    }
    Ok(())
}

/// Second-order sections of a digital Butterworth low-pass filter.
pub fn design_butterworth_lowpass(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<Vec<Biquad>> {
    check_filter_params(order, cutoff_hz, sample_rate_hz)?;
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));

    for idx in 0..order / 2 {
        let phi = (2 * idx + 1) as f64 * PI / (2 * order) as f64;
        // s^2 + 2 sin(phi) s + 1
        let inv_q = 2.0 * phi.sin();
        let norm = 1.0 / (1.0 + k * inv_q + k2);
        let b0 = k2 * norm;
        sections.push(Biquad {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k2 - 1.0) * norm,
            a2: (1.0 - k * inv_q + k2) * norm,
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Biquad {
            b0,
            b1: b0,
            b2: 0.0,
            a1: (k - 1.0) / (k + 1.0),
            a2: 0.0,
        });
    }
    Ok(sections)
}

/// Single causal pass, state initialized to the steady state of `signal[0]`.
pub(crate) fn sosfilt(sections: &[Biquad], signal: &mut [f64]) {
    let Some(&x0) = signal.first() else {
        return;
    };
    let mut level = x0;
    for s in sections {
        let state = s.steady_state(level);
        s.run(signal, state);
        level *= s.dc_gain();
    }
}

/// Forward-backward filtering with odd reflection padding of `pad` samples
/// at each end. The result has no phase shift and squared magnitude response.
pub fn filtfilt(sections: &[Biquad], signal: &[f64], pad: usize) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let first = signal[0];
    let last = signal[n - 1];

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    sosfilt(sections, &mut ext);
    ext.reverse();
    sosfilt(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Low-pass every channel of a recording, forward then backward.
pub fn butterworth_lowpass(
    recording: &RawRecording,
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<RawRecording> {
    let sections = design_butterworth_lowpass(order, cutoff_hz, sample_rate_hz)?;
    let pad = 3 * order;
    let (rows, cols) = recording.samples.dim();
    let mut out = Array2::zeros((rows, cols));
    for c in 0..cols {
        let column: Vec<f64> = recording.samples.column(c).to_vec();
        let filtered = filtfilt(&sections, &column, pad);
        out.column_mut(c)
            .iter_mut()
            .zip(filtered)
            .for_each(|(dst, v)| *dst = v);
    }
    Ok(RawRecording {
        samples: out,
        ..recording.clone()
    })
}

/// Applies a configured low-pass filter, zero-phase or single forward pass.
pub fn apply_filter(recording: &RawRecording, cfg: &FilterConfig) -> Result<RawRecording> {
    if cfg.zero_phase {
        return butterworth_lowpass(recording, cfg.order, cfg.cutoff_hz, cfg.sample_rate_hz);
    }
    let sections = design_butterworth_lowpass(cfg.order, cfg.cutoff_hz, cfg.sample_rate_hz)?;
    let mut out = recording.samples.clone();
    for mut col in out.columns_mut() {
        let mut column: Vec<f64> = col.to_vec();
        sosfilt(&sections, &mut column);
        col.iter_mut().zip(column).for_each(|(dst, v)| *dst = v);
    }
    Ok(RawRecording {
        samples: out,
        ..recording.clone()
    })
}
