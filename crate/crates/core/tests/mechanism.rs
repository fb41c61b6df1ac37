use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use caadp::data::{stratified_split, synth_imbalanced, Scaler, WindowSet};
use caadp::dp::{train, ClipMode, DpConfig, Mechanism, TrainOutcome};
use caadp::model::{init_params, loss_and_grad, Batch, ModelSpec};

fn data(n: usize, window_len: usize) -> (WindowSet, WindowSet) {
    let all = synth_imbalanced(n, 0.25, window_len, 2, 5).unwrap();
    let (mut fit, mut val) = stratified_split(&all, 0.8, 5).unwrap();
    let s = Scaler::fit_windows(&fit.windows).unwrap();
    fit.windows = s.transform_windows(&fit.windows).unwrap();
    val.windows = s.transform_windows(&val.windows).unwrap();
    (fit, val)
}

fn dp(mechanism: Mechanism, sigma: f64, alpha: f64, seed: u64) -> DpConfig {
    DpConfig {
        sigma_base: sigma,
        alpha,
        batch_size: 16,
        rng_seed: seed,
        ..DpConfig::new(mechanism)
    }
}

fn run(spec: &ModelSpec, cfg: &DpConfig, epochs: usize) -> TrainOutcome {
    let (fit, val) = data(320, 16);
    train(spec, &fit, &val, cfg, epochs, 0.05).unwrap()
}

#[test]
fn no_dp_is_plain_minibatch_sgd() {
    let (fit, val) = data(320, 16);
    let spec = ModelSpec::mlp(16, 2, &[6]).with_seed(3);
    let cfg = dp(Mechanism::NoDp, 0.0, 0.0, 9);
    let out = train(&spec, &fit, &val, &cfg, 1, 0.05).unwrap();

    let mut params = init_params(&spec).unwrap();
    let mut order: Vec<usize> = (0..fit.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    for chunk in order.chunks_exact(16) {
        let batch = Batch::from_windows(&fit, chunk).unwrap();
        let (_, g) = loss_and_grad(&spec, &params, &batch).unwrap();
        for ((_, p), (_, gt)) in params.iter_mut().zip(g.iter()) {
            for (v, gv) in p.data_mut().iter_mut().zip(gt.data()) {
                *v -= 0.05 * gv;
            }
        }
    }
    assert_eq!(out.params, params);
    assert!(out.ledger.eps_rdp_pre.is_infinite());
}

#[test]
fn zero_alpha_reproduces_the_fixed_noise_baseline() {
    let spec = ModelSpec::mlp(16, 2, &[6]).with_seed(1);
    let conv = run(&spec, &dp(Mechanism::ConvDp, 0.3, 0.0, 4), 4);
    let ca = run(&spec, &dp(Mechanism::CaAdp, 0.3, 0.0, 4), 4);
    assert_eq!(conv.traces, ca.traces);
    assert_eq!(conv.params, ca.params);
    let mut ledger = ca.ledger.clone();
    ledger.mechanism = conv.ledger.mechanism;
    assert_eq!(ledger, conv.ledger);
}

#[test]
fn accounting_ignores_alpha() {
    let spec = ModelSpec::logistic(16, 2);
    let a = run(&spec, &dp(Mechanism::CaAdp, 0.8, 0.0, 2), 3).ledger;
    let b = run(&spec, &dp(Mechanism::CaAdp, 0.8, 0.9, 2), 3).ledger;
    assert_eq!(a.eps_rdp_pre, b.eps_rdp_pre);
    assert_eq!(a.eps_analytic_pre, b.eps_analytic_pre);
}

#[test]
fn every_step_obeys_the_noise_rule_and_the_clip_bound() {
    let spec = ModelSpec::mlp(16, 2, &[6]).with_seed(2);
    let (sigma, alpha) = (0.5, 0.6);
    for mode in [ClipMode::PerTensorBatch, ClipMode::PerSample] {
        let mut cfg = dp(Mechanism::CaAdp, sigma, alpha, 7);
        cfg.clip_c = 0.05;
        cfg.clip_mode = mode;
        let out = run(&spec, &cfg, 3);
        assert!(!out.traces.is_empty());
        for t in &out.traces {
            assert_eq!(t.sigma_b, sigma * (1.0 - alpha * t.batch_mean_label));
            assert!(t.sigma_b >= sigma * (1.0 - alpha) && t.sigma_b <= sigma);
            let k = t.batch_mean_label * 16.0;
            assert_eq!(k, k.round());
            match mode {
                ClipMode::PerTensorBatch => {
                    assert!(t.post_clip_norms.iter().all(|&n| n <= 0.05 + 1e-12));
                }
                ClipMode::PerSample => {
                    let global = t.post_clip_norms.iter().map(|n| n * n).sum::<f64>().sqrt();
                    assert!(global <= 0.05 + 1e-12);
                }
            }
        }
    }
}

#[test]
fn each_epoch_visits_every_window_once() {
    // 256 fit windows split evenly into 16 batches, so nothing is dropped
    let all = synth_imbalanced(320, 0.25, 16, 2, 5).unwrap();
    let (fit, val) = stratified_split(&all, 0.8, 5).unwrap();
    assert_eq!(fit.len(), 256);
    let positives = fit.class_counts().1 as f64;
    let spec = ModelSpec::logistic(16, 2);
    let out = train(
        &spec,
        &fit,
        &val,
        &dp(Mechanism::CaAdp, 0.5, 0.5, 3),
        4,
        0.05,
    )
    .unwrap();
    let mut patterns = Vec::new();
    for epoch in 1..=out.epochs_run {
        let steps: Vec<f64> = out
            .traces
            .iter()
            .filter(|t| t.epoch == epoch)
            .map(|t| t.batch_mean_label)
            .collect();
        assert_eq!(steps.len(), 16);
        let seen: f64 = steps.iter().map(|y| y * 16.0).sum();
        assert_eq!(seen, positives);
        patterns.push(steps);
    }
    // reshuffling changes the batch composition between epochs
    assert!(patterns.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn no_dp_loss_falls_on_separable_data() {
    let spec = ModelSpec::logistic(16, 2);
    let out = run(&spec, &dp(Mechanism::NoDp, 0.0, 0.0, 0), 5);
    let l = &out.epoch_losses;
    assert!(l.len() >= 5);
    assert!(l[4] < l[0], "{l:?}");
    assert!(
        l.windows(2).take(4).filter(|w| w[1] > w[0] + 1e-3).count() <= 1,
        "{l:?}"
    );
}

#[test]
fn training_is_deterministic() {
    let spec = ModelSpec::mlp(16, 2, &[4]).with_seed(6);
    let cfg = dp(Mechanism::CaAdp, 0.4, 0.5, 8);
    let a = run(&spec, &cfg, 3);
    let b = run(&spec, &cfg, 3);
    assert_eq!(a.params, b.params);
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.ledger, b.ledger);
}

#[test]
fn post_training_epsilon_uses_the_best_epoch() {
    let spec = ModelSpec::mlp(16, 2, &[4]).with_seed(6);
    let out = run(&spec, &dp(Mechanism::ConvDp, 0.8, 0.0, 1), 6);
    let l = &out.ledger;
    assert_eq!(l.epochs_actual, out.epochs_actual);
    assert_eq!(l.steps_post, out.epochs_actual * l.steps_per_epoch);
    assert!(l.eps_rdp_post <= l.eps_rdp_pre);
    let best = out.val_f1[out.epochs_actual - 1];
    assert!(out.val_f1[..out.epochs_actual - 1]
        .iter()
        .all(|&f| f < best));
}
