//! Synthetic imbalanced fall/ADL windows.
//!
//! Every window is a slow per-channel sinusoid plus band-limited noise.
//! Fall windows additionally carry a short positive transient followed by a
//! sustained level shift, which is what separates the classes.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Provenance, WindowSet};
use crate::error::{Error, Result};

/// Standard deviation of the band-limited noise.
pub const SYNTH_NOISE_STD: f64 = 1.0;
/// Amplitude of the smooth baseline.
pub const SYNTH_BASELINE_AMPLITUDE: f64 = 1.0;
/// Transient peak, as a multiple of the noise std.
pub const SYNTH_TRANSIENT_MAGNITUDE: (f64, f64) = (6.0, 10.0);
/// Transient width, as a fraction of the window length.
pub const SYNTH_TRANSIENT_WIDTH: (f64, f64) = (0.05, 0.15);
/// Post-transient level shift, as a multiple of the noise std.
pub const SYNTH_LEVEL_SHIFT: (f64, f64) = (1.0, 2.0);

const SMOOTHING_TAPS: usize = 5;

/// Generates `n` windows, `round(n * fall_fraction)` of them falls, placed
/// at random positions. Output is a pure function of the arguments.
pub fn synth_imbalanced(
    n: usize,
    fall_fraction: f64,
    window_len: usize,
    channels: usize,
    seed: u64,
) -> Result<WindowSet> {
    if !(fall_fraction > 0.0 && fall_fraction < 1.0) {
        return Err(Error::param("fall_fraction must lie in (0, 1)"));
    }
    if (n as f64) * fall_fraction < 1.0 {
        return Err(Error::param(format!(
            "n * fall_fraction = {} yields no fall windows",
            n as f64 * fall_fraction
        )));
    }
    if window_len < 2 || channels == 0 {
        return Err(Error::param("window_len must be >= 2 and channels >= 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let falls = ((n as f64) * fall_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < falls)).collect();
    labels.shuffle(&mut rng);

    let mut windows = Array3::zeros((n, window_len, channels));
    let norm = (SMOOTHING_TAPS as f64).sqrt();
    for (w, &label) in labels.iter().enumerate() {
        for c in 0..channels {
            let cycles: f64 = rng.gen_range(0.5..2.5);
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            let white: Vec<f64> = (0..window_len + SMOOTHING_TAPS - 1)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for t in 0..window_len {
                let base = SYNTH_BASELINE_AMPLITUDE
                    * (2.0 * PI * cycles * t as f64 / window_len as f64 + phase).sin();
                let noise: f64 = white[t..t + SMOOTHING_TAPS].iter().sum::<f64>() / norm;
                windows[[w, t, c]] = base + SYNTH_NOISE_STD * noise;
            }
        }
        if label == 1 {
            let magnitude = rng.gen_range(SYNTH_TRANSIENT_MAGNITUDE.0..SYNTH_TRANSIENT_MAGNITUDE.1)
                * SYNTH_NOISE_STD;
            let frac = rng.gen_range(SYNTH_TRANSIENT_WIDTH.0..SYNTH_TRANSIENT_WIDTH.1);
            let width = ((frac * window_len as f64).round() as usize).clamp(2, window_len);
            let start = rng.gen_range(0..=window_len - width);
            let shift = rng.gen_range(SYNTH_LEVEL_SHIFT.0..SYNTH_LEVEL_SHIFT.1) * SYNTH_NOISE_STD;
            let gains: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..1.0)).collect();
            for t in start..window_len {
                // raised-cosine bump over the transient, then a flat shift
                let add = if t < start + width {
                    let u = (t - start) as f64 / (width - 1) as f64;
                    magnitude * 0.5 * (1.0 - (2.0 * PI * u).cos())
                } else {
                    shift
                };
                for (c, g) in gains.iter().enumerate() {
                    windows[[w, t, c]] += g * add;
                }
            }
        }
    }
    WindowSet::new(
        windows,
        labels,
        Provenance {
            dataset: "synthetic".into(),
            config_hash: super::short_hash(
                format!("{n}:{fall_fraction}:{window_len}:{channels}:{seed}").as_bytes(),
            ),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    #[test]
    fn class_count_and_shape() {
        let ws = synth_imbalanced(1000, 0.25, 32, 3, 7).unwrap();
        assert_eq!(ws.class_counts(), (750, 250));
        assert_eq!(ws.windows.dim(), (1000, 32, 3));
    }

    #[test]
    fn bit_identical_for_same_seed() {
        let a = synth_imbalanced(50, 0.2, 16, 2, 9).unwrap();
        let b = synth_imbalanced(50, 0.2, 16, 2, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_imbalanced(50, 0.2, 16, 2, 10).unwrap();
        assert_ne!(a.windows, c.windows);
    }

    #[test]
    fn falls_have_larger_peaks() {
        let ws = synth_imbalanced(400, 0.3, 64, 3, 1).unwrap();
        let peak = |i: usize| {
            ws.windows
                .index_axis(Axis(0), i)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let mean = |class: u8| {
            let idx: Vec<usize> = (0..ws.len()).filter(|&i| ws.labels[i] == class).collect();
            idx.iter().map(|&i| peak(i)).sum::<f64>() / idx.len() as f64
        };
        assert!(mean(1) > mean(0));
    }

    #[test]
    fn rejects_empty_fall_class() {
        assert!(synth_imbalanced(3, 0.2, 16, 1, 0).is_err());
        assert!(synth_imbalanced(10, 1.0, 16, 1, 0).is_err());
    }
}
