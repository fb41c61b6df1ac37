//! Class-aware adaptive noise for private gradient descent, plus the two
//! baselines it is compared against.
//!
//! Each step clips the gradient, derives the batch noise multiplier from the
//! fraction of positive labels in the batch, adds Gaussian noise and takes a
//! plain SGD step:
//!
//! ```
//! use caadp::dp::{adaptive_sigma, DpConfig, Mechanism};
//!
//! let cfg = DpConfig {
//!     sigma_base: 0.05,
//!     alpha: 0.6,
//!     ..DpConfig::new(Mechanism::CaAdp)
//! };
//! assert!((adaptive_sigma(&cfg, 1.0) - 0.02).abs() < 1e-15);
//! assert!((adaptive_sigma(&cfg, 0.0) - 0.05).abs() < 1e-15);
//! ```

mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::{GradSet, ParamSet};

pub use train::{train, write_trace_csv, TrainOutcome, PATIENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Noise multiplier lowered on fall-heavy batches.
    CaAdp,
    /// Fixed noise multiplier.
    ConvDp,
    /// No clipping, no noise.
    NoDp,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::CaAdp => "ca_adp",
            Mechanism::ConvDp => "conv_dp",
            Mechanism::NoDp => "no_dp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clip each tensor of the batch-mean gradient separately.
    PerTensorBatch,
    /// Clip every sample's whole gradient, then average.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaleMode {
    /// Noise standard deviation `sigma_b * clip_c`.
    SigmaTimesC,
    /// Noise standard deviation `sigma_b`.
    SigmaLiteral,
}

fn default_clip_c() -> f64 {
    2.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    32
}
fn default_clip_mode() -> ClipMode {
    ClipMode::PerTensorBatch
}
fn default_noise_scale_mode() -> NoiseScaleMode {
    NoiseScaleMode::SigmaTimesC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub mechanism: Mechanism,
    #[serde(default)]
    pub sigma_base: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_clip_c")]
    pub clip_c: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_clip_mode")]
    pub clip_mode: ClipMode,
    #[serde(default = "default_noise_scale_mode")]
    pub noise_scale_mode: NoiseScaleMode,
    #[serde(default)]
    pub rng_seed: u64,
}

impl DpConfig {
    /// Defaults: C = 2, delta = 1e-5, batches of 32, per-tensor clipping,
    /// noise scaled by C; sigma_base and alpha zero.
    pub fn new(mechanism: Mechanism) -> Self {
        DpConfig {
            mechanism,
            sigma_base: 0.0,
            alpha: 0.0,
            clip_c: default_clip_c(),
            delta: default_delta(),
            batch_size: default_batch_size(),
            clip_mode: default_clip_mode(),
            noise_scale_mode: default_noise_scale_mode(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_base.is_finite() && self.sigma_base >= 0.0) {
            return Err(Error::param(format!(
                "sigma_base {} must be >= 0",
                self.sigma_base
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::param(format!(
                "alpha {} must lie in [0, 1)",
                self.alpha
            )));
        }
        if !(self.clip_c.is_finite() && self.clip_c > 0.0) {
            return Err(Error::param(format!("clip_c {} must be > 0", self.clip_c)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!(
                "delta {} must lie in (0, 1)",
                self.delta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the injected noise for a given multiplier.
    pub fn noise_std(&self, sigma_b: f64) -> f64 {
        match self.noise_scale_mode {
            NoiseScaleMode::SigmaTimesC => sigma_b * self.clip_c,
            NoiseScaleMode::SigmaLiteral => sigma_b,
        }
    }
}

/// One optimisation step as it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step_index: usize,
    pub epoch: usize,
    pub batch_mean_label: f64,
    pub sigma_b: f64,
    pub loss: f64,
    /// per tensor, of the gradient before clipping (the batch mean)
    pub pre_clip_norms: Vec<f64>,
    /// per tensor, of the gradient that received noise
    pub post_clip_norms: Vec<f64>,
}

pub fn batch_mean_label(batch: &Batch) -> f64 {
    batch.y.iter().map(|&y| f64::from(y)).sum::<f64>() / batch.len() as f64
}

fn check_clip(c: f64, grads: &GradSet) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::param(format!("clip bound {c} must be > 0")));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of '{name}'")));
    }
    Ok(())
}

/// Scales each tensor by `1 / max(1, |g| / c)`.
pub fn clip_grads(grads: &GradSet, c: f64) -> Result<GradSet> {
    check_clip(c, grads)?;
    let mut out = grads.clone();
    for (_, t) in out.iter_mut() {
        let norm = t.norm_l2();
        if norm > c {
            t.scale(1.0 / (norm / c));
        }
    }
    Ok(out)
}

/// Clips each sample's concatenated gradient to norm `c`, then averages.
pub fn clip_per_sample(grads: &[GradSet], c: f64) -> Result<GradSet> {
    let first = grads
        .first()
        .ok_or_else(|| Error::param("no per-sample gradients to clip"))?;
    let mut mean = first.zeros_like();
    let n = grads.len() as f64;
    for g in grads {
        check_clip(c, g)?;
        if !g.same_layout(first) {
            return Err(Error::shape("per-sample gradients differ in layout"));
        }
        let norm = g.global_norm();
        let factor = if norm > c { 1.0 / (norm / c) } else { 1.0 };
        mean.add_scaled(g, factor / n);
    }
    Ok(mean)
}

/// Noise multiplier for a batch with mean label `y_bar`.
pub fn adaptive_sigma(cfg: &DpConfig, y_bar: f64) -> f64 {
    match cfg.mechanism {
        Mechanism::CaAdp => cfg.sigma_base * (1.0 - cfg.alpha * y_bar),
        Mechanism::ConvDp => cfg.sigma_base,
        Mechanism::NoDp => 0.0,
    }
}

/// Gaussian noise source, separate from the data-shuffling stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

const NOISE_STREAM_ID: u64 = 0x6e_6f69_7365;

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM_ID);
        NoiseStream { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// `theta - eta * (g + N(0, s^2))` with `s` from the configured scale mode.
/// A zero multiplier draws nothing and gives the exact SGD step.
pub fn noisy_update(
    params: &ParamSet,
    grads_clipped: &GradSet,
    sigma_b: f64,
    cfg: &DpConfig,
    eta: f64,
    noise: &mut NoiseStream,
) -> Result<ParamSet> {
    if !params.same_layout(grads_clipped) {
        return Err(Error::shape("gradient layout differs from parameters"));
    }
    let s = cfg.noise_std(sigma_b);
    let mut out = params.clone();
    for ((_, p), (_, g)) in out.iter_mut().zip(grads_clipped.iter()) {
        for (v, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            let noisy = if s > 0.0 {
                gv + s * noise.standard_normal()
            } else {
                gv
            };
            *v -= eta * noisy;
        }
    }
    Ok(out)
}
