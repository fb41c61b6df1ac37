use ndarray::{s, Array3};

use super::{LabelRule, Provenance, RawRecording, WindowSet};
use crate::error::{Error, Result};

/// Number of windows a recording of `len` samples yields.
pub fn window_count(len: usize, window_len: usize, step: usize) -> usize {
    if len < window_len || step == 0 {
        0
    } else {
        (len - window_len) / step + 1
    }
}

/// Majority label of a window; an exact tie goes to the fall class.
pub fn window_label_mode(labels: &[u8]) -> u8 {
    let falls = labels.iter().filter(|&&l| l == 1).count();
    u8::from(2 * falls >= labels.len())
}

/// Cuts a recording into windows starting at `0, step, 2*step, ...`.
///
/// Recordings shorter than one window yield an empty set.
pub fn segment(
    recording: &RawRecording,
    window_len: usize,
    step: usize,
    rule: LabelRule,
) -> Result<WindowSet> {
    if window_len == 0 || step == 0 {
        return Err(Error::param("window_len and step must be positive"));
    }
    let channels = recording.channels();
    let provenance = Provenance::default();
    let count = window_count(recording.len(), window_len, step);
    if count == 0 {
        return Ok(WindowSet::empty(window_len, channels, provenance));
    }

    let file_label = rule.file_label(&recording.source_label);
    let row_labels = match (file_label, &recording.row_labels) {
        (Some(_), _) => None,
        (None, Some(rows)) if rows.len() == recording.len() => Some(rows),
        (None, _) => {
            return Err(Error::param(format!(
                "recording '{}' has no per-row labels for the mode rule",
                recording.source_label
            )))
        }
    };

    let mut windows = Array3::zeros((count, window_len, channels));
    let mut labels = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * step;
        windows
            .slice_mut(s![w, .., ..])
            .assign(&recording.samples.slice(s![start..start + window_len, ..]));
        labels.push(match (file_label, row_labels) {
            (Some(l), _) => l,
            (None, Some(rows)) => window_label_mode(&rows[start..start + window_len]),
            (None, None) => unreachable!(),
        });
    }
    WindowSet::new(windows, labels, provenance)
}
