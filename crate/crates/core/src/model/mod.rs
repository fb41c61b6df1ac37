//! Differentiable reference models for binary classification of windows.
//!
//! Three architectures share one interface: a logistic regression over the
//! flattened window, a ReLU multilayer perceptron, and a hybrid of 1-D
//! temporal convolution blocks feeding a bidirectional LSTM. Gradients are
//! written out by hand; there is no autodiff graph. The loss is the mean
//! binary cross-entropy over a batch, with probabilities clamped to
//! `[PROB_CLAMP, 1 - PROB_CLAMP]`.
//!
//! ```
//! use caadp::model::{init_params, loss_and_grad, Batch, ModelSpec};
//! use ndarray::Array3;
//!
//! let spec = ModelSpec::logistic(8, 2);
//! let mut params = init_params(&spec).unwrap();
//! params.scale(0.0);
//! let batch = Batch::new(Array3::ones((2, 8, 2)), vec![0, 1]).unwrap();
//! let (loss, _grads) = loss_and_grad(&spec, &params, &batch).unwrap();
//! assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
//! ```

mod checkpoint;
mod init;
mod net;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::tensor::{GradSet, ParamSet};

pub use checkpoint::{read_params, write_params};
pub use init::init_params;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
    /// Convolution blocks followed by a BiLSTM. An empty block list gives a
    /// plain BiLSTM; `lstm_hidden == 0` gives a convolution-only network
    /// with a dense head over the flattened feature map.
    CnnBilstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel_len: usize,
    pub pool_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub window_len: usize,
    pub channels: usize,
    #[serde(default)]
    pub mlp_hidden: Vec<usize>,
    #[serde(default)]
    pub cnn: Vec<ConvBlock>,
    #[serde(default)]
    pub lstm_hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn logistic(window_len: usize, channels: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            window_len,
            channels,
            mlp_hidden: Vec::new(),
            cnn: Vec::new(),
            lstm_hidden: 0,
            seed: 0,
        }
    }

    pub fn mlp(window_len: usize, channels: usize, hidden: &[usize]) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            mlp_hidden: hidden.to_vec(),
            ..Self::logistic(window_len, channels)
        }
    }

    /// Desk-scale hybrid: conv(16, k5, pool 2) -> conv(32, k5, pool 2) ->
    /// BiLSTM with 32 units per direction -> dense.
    pub fn cnn_bilstm(window_len: usize, channels: usize) -> Self {
        ModelSpec {
            kind: ModelKind::CnnBilstm,
            cnn: vec![
                ConvBlock {
                    filters: 16,
                    kernel_len: 5,
                    pool_len: 2,
                },
                ConvBlock {
                    filters: 32,
                    kernel_len: 5,
                    pool_len: 2,
                },
            ],
            lstm_hidden: 32,
            ..Self::logistic(window_len, channels)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn input_len(&self) -> usize {
        self.window_len * self.channels
    }

    /// `(steps, features)` of the sequence that reaches the recurrent layer.
    pub fn feature_map_shape(&self) -> Result<(usize, usize)> {
        let mut steps = self.window_len;
        let mut feats = self.channels;
        for (i, b) in self.cnn.iter().enumerate() {
            if b.filters == 0 || b.kernel_len == 0 || b.pool_len == 0 {
                return Err(Error::param(format!("conv block {i} has a zero size")));
            }
            if b.kernel_len > steps {
                return Err(Error::param(format!(
                    "conv block {i}: kernel {} longer than its input ({steps} steps)",
                    b.kernel_len
                )));
            }
            steps = (steps - b.kernel_len + 1) / b.pool_len;
            if steps == 0 {
                return Err(Error::param(format!(
                    "conv block {i} pools the sequence away"
                )));
            }
            feats = b.filters;
        }
        Ok((steps, feats))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.channels == 0 {
            return Err(Error::param("window_len and channels must be positive"));
        }
        match self.kind {
            ModelKind::Logistic => Ok(()),
            ModelKind::Mlp => {
                if self.mlp_hidden.contains(&0) {
                    Err(Error::param("MLP widths must be positive"))
                } else {
                    Ok(())
                }
            }
            ModelKind::CnnBilstm => self.feature_map_shape().map(|_| ()),
        }
    }
}

/// A mini-batch of windows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// batch × window_len × channels
    pub x: Array3<f64>,
    pub y: Vec<u8>,
}

impl Batch {
    pub fn new(x: Array3<f64>, y: Vec<u8>) -> Result<Self> {
        if y.is_empty() || x.len_of(Axis(0)) != y.len() {
            return Err(Error::shape(format!(
                "batch has {} inputs and {} labels",
                x.len_of(Axis(0)),
                y.len()
            )));
        }
        Ok(Batch {
            x: x.as_standard_layout().into_owned(),
            y,
        })
    }

    pub fn from_windows(ws: &WindowSet, indices: &[usize]) -> Result<Self> {
        let sub = ws.select(indices);
        Batch::new(sub.windows, sub.labels)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn sample(&self, i: usize) -> &[f64] {
        let per = self.x.len_of(Axis(1)) * self.x.len_of(Axis(2));
        &self.x.as_slice().expect("standard layout")[i * per..(i + 1) * per]
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Clamped binary cross-entropy of one logit and the gradient w.r.t. it.
pub(crate) fn bce_with_grad(logit: f64, label: u8) -> (f64, f64) {
    let p = sigmoid(logit);
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = f64::from(label);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let dz = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
        p - y
    } else {
        0.0
    };
    (loss, dz)
}

fn check_batch(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<()> {
    let (_, l, c) = batch.x.dim();
    if (l, c) != (spec.window_len, spec.channels) {
        return Err(Error::shape(format!(
            "batch windows are {l}x{c}, model expects {}x{}",
            spec.window_len, spec.channels
        )));
    }
    net::Net::resolve(spec, params).map(|_| ())
}

/// Sigmoid output for every sample.
pub fn forward(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
    check_batch(spec, params, batch)?;
    let net = net::Net::resolve(spec, params)?;
    Ok((0..batch.len())
        .map(|i| sigmoid(net.logit(batch.sample(i))))
        .collect())
}

fn sample_grads<'a>(
    spec: &'a ModelSpec,
    params: &'a ParamSet,
    batch: &'a Batch,
) -> Result<impl Iterator<Item = (f64, GradSet)> + 'a> {
    check_batch(spec, params, batch)?;
    let net = net::Net::resolve(spec, params)?;
    Ok((0..batch.len()).map(move |i| {
        let mut g = params.zeros_like();
        let loss = net.loss_and_grad(batch.sample(i), batch.y[i], &mut g);
        (loss, g)
    }))
}

fn check_finite(loss: f64, grads: &GradSet) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of '{name}'")));
    }
    Ok(())
}

/// Mean clamped BCE over the batch and its exact gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, GradSet)> {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for (loss, g) in sample_grads(spec, params, batch)? {
        total += loss;
        grads.add_scaled(&g, 1.0 / n);
    }
    let loss = total / n;
    check_finite(loss, &grads)?;
    Ok((loss, grads))
}

/// Gradient of each sample's own loss, plus the batch-mean loss.
pub fn per_sample_grads(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &Batch,
) -> Result<(f64, Vec<GradSet>)> {
    let mut total = 0.0;
    let mut out = Vec::with_capacity(batch.len());
    for (loss, g) in sample_grads(spec, params, batch)? {
        check_finite(loss, &g)?;
        total += loss;
        out.push(g);
    }
    Ok((total / batch.len() as f64, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, l: usize, c: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array3::from_shape_fn((n, l, c), |_| rng.gen_range(-1.0..1.0));
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        Batch::new(x, y).unwrap()
    }

    fn small_hybrid() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::CnnBilstm,
            window_len: 20,
            channels: 3,
            mlp_hidden: vec![],
            cnn: vec![ConvBlock {
                filters: 4,
                kernel_len: 3,
                pool_len: 2,
            }],
            lstm_hidden: 5,
            seed: 3,
        }
    }

    #[test]
    fn zero_logistic_gives_half_and_ln2() {
        let spec = ModelSpec::logistic(200, 6);
        let mut params = init_params(&spec).unwrap();
        params.scale(0.0);
        let batch = random_batch(4, 200, 6, 1);
        assert!(forward(&spec, &params, &batch)
            .unwrap()
            .iter()
            .all(|&p| p == 0.5));
        let (loss, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let spec = ModelSpec::logistic(10, 2);
        let params = init_params(&spec).unwrap();
        let batch = random_batch(2, 10, 3, 0);
        assert!(matches!(
            forward(&spec, &params, &batch),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn feature_map_arithmetic() {
        let spec = ModelSpec::cnn_bilstm(200, 6);
        // (200 - 5 + 1) / 2 = 98, (98 - 5 + 1) / 2 = 47
        assert_eq!(spec.feature_map_shape().unwrap(), (47, 32));
        let one = ModelSpec {
            cnn: vec![spec.cnn[0]],
            ..spec.clone()
        };
        assert_eq!(one.feature_map_shape().unwrap(), (98, 16));
        let odd = ModelSpec {
            window_len: 31,
            cnn: vec![ConvBlock {
                filters: 2,
                kernel_len: 4,
                pool_len: 3,
            }],
            ..spec
        };
        assert_eq!(odd.feature_map_shape().unwrap().0, (31 - 4 + 1) / 3);
    }

    #[test]
    fn probabilities_in_open_interval() {
        for spec in [ModelSpec::mlp(20, 3, &[6, 4]), small_hybrid()] {
            let params = init_params(&spec).unwrap();
            let batch = random_batch(5, 20, 3, 9);
            let p = forward(&spec, &params, &batch).unwrap();
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn per_sample_mean_matches_batch_grad() {
        let spec = small_hybrid();
        let params = init_params(&spec).unwrap();
        let batch = random_batch(6, 20, 3, 4);
        let (_, full) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (_, each) = per_sample_grads(&spec, &params, &batch).unwrap();
        let mut mean = params.zeros_like();
        for g in &each {
            mean.add_scaled(g, 1.0 / each.len() as f64);
        }
        for ((_, a), (_, b)) in mean.iter().zip(full.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn batch_of_one_equals_its_sample_grad() {
        let spec = ModelSpec::mlp(20, 3, &[5]);
        let params = init_params(&spec).unwrap();
        let batch = random_batch(1, 20, 3, 2);
        let (_, full) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (_, each) = per_sample_grads(&spec, &params, &batch).unwrap();
        assert_eq!(each.len(), 1);
        assert_eq!(each[0], full);
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grad_unchanged() {
        let spec = small_hybrid();
        let params = init_params(&spec).unwrap();
        let batch = random_batch(3, 20, 3, 8);
        let doubled = Batch::new(
            ndarray::concatenate(Axis(0), &[batch.x.view(), batch.x.view()]).unwrap(),
            batch.y.iter().chain(batch.y.iter()).copied().collect(),
        )
        .unwrap();
        let (l1, g1) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&spec, &params, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_grad_ignores_other_samples() {
        let spec = ModelSpec::mlp(20, 3, &[4]);
        let params = init_params(&spec).unwrap();
        let a = random_batch(3, 20, 3, 5);
        let mut b = a.clone();
        b.x.index_axis_mut(Axis(0), 1).fill(0.25);
        let (_, ga) = per_sample_grads(&spec, &params, &a).unwrap();
        let (_, gb) = per_sample_grads(&spec, &params, &b).unwrap();
        assert_eq!(ga[0], gb[0]);
        assert_eq!(ga[2], gb[2]);
        assert_ne!(ga[1], gb[1]);
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let spec = small_hybrid();
        let params = init_params(&spec).unwrap();
        let batch = random_batch(5, 20, 3, 12);
        let order = [3usize, 0, 4, 1, 2];
        let shuffled = Batch::new(
            batch.x.select(Axis(0), &order),
            order.iter().map(|&i| batch.y[i]).collect(),
        )
        .unwrap();
        let (l1, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (l2, _) = loss_and_grad(&spec, &params, &shuffled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn clamped_loss_has_zero_gradient() {
        let (loss, dz) = bce_with_grad(50.0, 0);
        assert!((loss + (PROB_CLAMP).ln()).abs() < 1e-6);
        assert_eq!(dz, 0.0);
        let (_, dz) = bce_with_grad(0.3, 1);
        assert!((dz - (sigmoid(0.3) - 1.0)).abs() < 1e-15);
    }
}
