use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adaptive_sigma, batch_mean_label, clip_grads, clip_per_sample, noisy_update, ClipMode,
    DpConfig, Mechanism, NoiseStream, StepTrace,
};
use crate::accountant::{account, heterogeneous_eps, PrivacyLedger};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::metrics::{confusion, point_metrics, DEFAULT_THRESHOLD};
use crate::model::{forward, init_params, loss_and_grad, per_sample_grads, Batch, ModelSpec};
use crate::tensor::ParamSet;

/// Epochs without a validation F1 improvement before training stops.
pub const PATIENCE: usize = 10;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// parameters at the best validation epoch
    pub params: ParamSet,
    pub traces: Vec<StepTrace>,
    pub ledger: PrivacyLedger,
    pub epochs_run: usize,
    /// 1-based epoch of the best validation F1
    pub epochs_actual: usize,
    /// mean training loss of each epoch
    pub epoch_losses: Vec<f64>,
    pub val_f1: Vec<f64>,
}

fn validation_f1(spec: &ModelSpec, params: &ParamSet, val: &Batch) -> Result<f64> {
    let scores = forward(spec, params, val)?;
    Ok(point_metrics(&confusion(&scores, &val.y, DEFAULT_THRESHOLD)?).f1)
}

/// Trains from `init_params(spec)` for at most `epochs` epochs.
///
/// Every epoch reshuffles the training windows, drops the ragged tail and
/// runs one mechanism step per batch. The returned parameters are those of
/// the epoch with the best validation F1; training stops after
/// [`PATIENCE`] epochs without improvement.
pub fn train(
    spec: &ModelSpec,
    train_ws: &WindowSet,
    val_ws: &WindowSet,
    cfg: &DpConfig,
    epochs: usize,
    eta: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if epochs == 0 {
        return Err(Error::param("epochs must be positive"));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::param(format!("learning rate {eta} must be > 0")));
    }
    if val_ws.is_empty() {
        return Err(Error::param("validation set is empty"));
    }
    let n = train_ws.len();
    if cfg.batch_size > n {
        return Err(Error::param(format!(
            "batch size {} exceeds {n} training windows",
            cfg.batch_size
        )));
    }
    let val = Batch::new(val_ws.windows.clone(), val_ws.labels.clone())?;

    let mut params = init_params(spec)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut noise = NoiseStream::new(cfg.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batches = n / cfg.batch_size;

    let mut traces = Vec::with_capacity(epochs * batches);
    let mut epoch_losses = Vec::new();
    let mut val_f1 = Vec::new();
    let mut best: Option<(usize, f64, ParamSet)> = None;

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch = Batch::from_windows(train_ws, chunk)?;
            let (loss, mean_grad, clipped) = match (cfg.mechanism, cfg.clip_mode) {
                (Mechanism::NoDp, _) => {
                    let (loss, g) = loss_and_grad(spec, &params, &batch)?;
                    (loss, g.clone(), g)
                }
                (_, ClipMode::PerTensorBatch) => {
                    let (loss, g) = loss_and_grad(spec, &params, &batch)?;
                    let clipped = clip_grads(&g, cfg.clip_c)?;
                    (loss, g, clipped)
                }
                (_, ClipMode::PerSample) => {
                    let (loss, each) = per_sample_grads(spec, &params, &batch)?;
                    let mut mean = params.zeros_like();
                    for g in &each {
                        mean.add_scaled(g, 1.0 / each.len() as f64);
                    }
                    (loss, mean, clip_per_sample(&each, cfg.clip_c)?)
                }
            };
            let y_bar = batch_mean_label(&batch);
            let sigma_b = adaptive_sigma(cfg, y_bar);
            params = noisy_update(&params, &clipped, sigma_b, cfg, eta, &mut noise)?;
            if let Some(name) = params.first_non_finite() {
                return Err(Error::NonFinite(format!("parameter '{name}' after update")));
            }
            loss_sum += loss;
            traces.push(StepTrace {
                step_index: traces.len(),
                epoch,
                batch_mean_label: y_bar,
                sigma_b,
                loss,
                pre_clip_norms: mean_grad.norms(),
                post_clip_norms: clipped.norms(),
            });
        }
        epoch_losses.push(loss_sum / batches as f64);
        let f1 = validation_f1(spec, &params, &val)?;
        val_f1.push(f1);
        match &best {
            Some((_, best_f1, _)) if f1 <= *best_f1 => {}
            _ => best = Some((epoch, f1, params.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= PATIENCE {
            break;
        }
    }

    let (epochs_actual, _, best_params) = best.expect("at least one epoch ran");
    let mut ledger = account(cfg, n, epochs, epochs_actual)?;
    if cfg.mechanism != Mechanism::NoDp {
        let sigmas: Vec<f64> = traces
            .iter()
            .filter(|t| t.epoch <= epochs_actual)
            .map(|t| t.sigma_b)
            .collect();
        ledger.eps_rdp_heterogeneous =
            heterogeneous_eps(ledger.q, &sigmas, &ledger.orders, cfg.delta)?;
    }
    Ok(TrainOutcome {
        params: best_params,
        epochs_run: epoch_losses.len(),
        traces,
        ledger,
        epochs_actual,
        epoch_losses,
        val_f1,
    })
}

/// Writes one row per step: `step, epoch, y_bar, sigma_b, loss`, then the
/// pre-clip and post-clip norm of every tensor.
pub fn write_trace_csv(path: &Path, traces: &[StepTrace], tensor_names: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut header = vec![
        "step".to_string(),
        "epoch".into(),
        "y_bar".into(),
        "sigma_b".into(),
        "loss".into(),
    ];
    header.extend(tensor_names.iter().map(|n| format!("pre_norm:{n}")));
    header.extend(tensor_names.iter().map(|n| format!("post_norm:{n}")));
    w.write_record(&header)?;
    for t in traces {
        let mut row = vec![
            t.step_index.to_string(),
            t.epoch.to_string(),
            t.batch_mean_label.to_string(),
            t.sigma_b.to_string(),
            t.loss.to_string(),
        ];
        row.extend(t.pre_clip_norms.iter().map(f64::to_string));
        row.extend(t.post_clip_norms.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
