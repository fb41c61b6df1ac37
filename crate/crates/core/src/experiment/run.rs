use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, load_splits, read_input, write_json, ExperimentConfig};
use crate::accountant::{account, format_eps};
use crate::data::{stratified_split, WindowSet};
use crate::dp::{train, write_trace_csv, Mechanism, TrainOutcome};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{forward, write_params, Batch};

/// One line of `results_<name>.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_id: String,
    pub dataset: String,
    pub mechanism: String,
    pub seed: u64,
    pub sigma_base: f64,
    pub alpha: f64,
    pub clip_c: f64,
    pub delta: f64,
    pub clip_mode: String,
    pub noise_scale_mode: String,
    pub eps_rdp_pre: String,
    pub eps_rdp_post: String,
    pub eps_analytic_pre: String,
    pub eps_analytic_post: String,
    pub epochs_actual: usize,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Contents of a run's `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub dataset: String,
    pub mechanism: Mechanism,
    pub seed: u64,
    pub sigma_base: f64,
    pub alpha: f64,
    pub eta: f64,
    pub epochs_budgeted: usize,
    pub epochs_run: usize,
    pub epochs_actual: usize,
    pub metrics: MetricReport,
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn check_shape(cfg: &ExperimentConfig, ws: &WindowSet) -> Result<()> {
    let spec = &cfg.model;
    if (ws.window_len(), ws.channels()) != (spec.window_len, spec.channels) {
        return Err(Error::shape(format!(
            "cached windows are {}x{}, model '{}' expects {}x{}",
            ws.window_len(),
            ws.channels(),
            cfg.name,
            spec.window_len,
            spec.channels
        )));
    }
    Ok(())
}

/// Training and validation parts of the training split.
fn carve_validation(
    cfg: &ExperimentConfig,
    train_ws: &WindowSet,
    seed: u64,
) -> Result<(WindowSet, WindowSet)> {
    stratified_split(train_ws, 1.0 - cfg.validation_fraction, seed)
}

fn train_seed(
    cfg: &ExperimentConfig,
    train_ws: &WindowSet,
    test_ws: &WindowSet,
    seed: u64,
    sigma_base: f64,
) -> Result<(TrainOutcome, MetricReport)> {
    let (fit, val) = carve_validation(cfg, train_ws, seed)?;
    let spec = cfg.model.clone().with_seed(seed);
    let mut dp = cfg.dp.clone();
    dp.rng_seed = seed;
    dp.sigma_base = sigma_base;
    let outcome = train(&spec, &fit, &val, &dp, cfg.epochs, cfg.learning_rate())?;
    let test = Batch::new(test_ws.windows.clone(), test_ws.labels.clone())?;
    let scores = forward(&spec, &outcome.params, &test)?;
    let report = evaluate(&scores, &test.y, DEFAULT_THRESHOLD)?;
    Ok((outcome, report))
}

fn result_row(
    cfg: &ExperimentConfig,
    seed: u64,
    outcome: &TrainOutcome,
    m: &MetricReport,
) -> ResultRow {
    let l = &outcome.ledger;
    ResultRow {
        model_id: cfg.name.clone(),
        dataset: cfg.dataset.as_str().to_string(),
        mechanism: cfg.dp.mechanism.as_str().to_string(),
        seed,
        sigma_base: cfg.dp.sigma_base,
        alpha: cfg.dp.alpha,
        clip_c: cfg.dp.clip_c,
        delta: cfg.dp.delta,
        clip_mode: serde_name(&cfg.dp.clip_mode),
        noise_scale_mode: serde_name(&cfg.dp.noise_scale_mode),
        eps_rdp_pre: format_eps(l.eps_rdp_pre),
        eps_rdp_post: format_eps(l.eps_rdp_post),
        eps_analytic_pre: format_eps(l.eps_analytic_pre),
        eps_analytic_post: format_eps(l.eps_analytic_post),
        epochs_actual: outcome.epochs_actual,
        roc_auc: m.roc_auc,
        pr_auc: m.pr_auc,
        accuracy: m.accuracy,
        specificity: m.specificity,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        macro_f1: m.macro_f1,
        weighted_f1: m.weighted_f1,
    }
}

fn write_run(
    cfg: &ExperimentConfig,
    seed: u64,
    outcome: &TrainOutcome,
    report: &MetricReport,
) -> Result<()> {
    let dir = cfg
        .output_dir
        .join("runs")
        .join(format!("{}-seed{seed}", cfg.name));
    create_dir(&dir)?;
    let record = RunRecord {
        model_id: cfg.name.clone(),
        dataset: cfg.dataset.as_str().to_string(),
        mechanism: cfg.dp.mechanism,
        seed,
        sigma_base: cfg.dp.sigma_base,
        alpha: cfg.dp.alpha,
        eta: cfg.learning_rate(),
        epochs_budgeted: cfg.epochs,
        epochs_run: outcome.epochs_run,
        epochs_actual: outcome.epochs_actual,
        metrics: *report,
    };
    write_json(&dir.join("metrics.json"), &record)?;
    write_json(&dir.join("ledger.json"), &outcome.ledger)?;
    let names: Vec<&str> = outcome.params.names().collect();
    write_trace_csv(&dir.join("trace.csv"), &outcome.traces, &names)?;
    write_params(&dir.join("checkpoint.bin"), &outcome.params)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains one run per configured seed and writes its artifacts plus
/// `results_<name>.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let (train_ws, test_ws) = load_splits(cfg)?;
    check_shape(cfg, &train_ws)?;
    check_shape(cfg, &test_ws)?;
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (outcome, report) = train_seed(cfg, &train_ws, &test_ws, seed, cfg.dp.sigma_base)?;
        write_run(cfg, seed, &outcome, &report)?;
        rows.push(result_row(cfg, seed, &outcome, &report));
    }
    write_rows(
        &cfg.output_dir.join(format!("results_{}.csv", cfg.name)),
        &rows,
    )?;
    Ok(rows)
}

fn default_sigma_grid() -> Vec<f64> {
    vec![0.02, 0.04, 0.05, 0.08, 0.10, 0.15, 0.20]
}
fn default_reference_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sigma_grid")]
    pub sigma_grid: Vec<f64>,
    /// overrides the experiment's alpha when set
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_reference_epochs")]
    pub reference_epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sigma_grid: default_sigma_grid(),
            alpha: None,
            reference_epochs: default_reference_epochs(),
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(&read_input(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() {
            return Err(Error::param("sigma_grid must not be empty"));
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("sigma_grid values must be positive"));
        }
        if self.sigma_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("sigma_grid must be strictly ascending"));
        }
        if self.reference_epochs == 0 {
            return Err(Error::param("reference_epochs must be positive"));
        }
        Ok(())
    }
}

/// `sweep_curve_<name>.csv`: epsilon against sigma at the reference epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub sigma: f64,
    pub q: f64,
    pub steps: usize,
    pub eps_analytic: f64,
    pub eps_rdp: f64,
}

/// One sigma of `sweep_<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    /// at the configured epoch budget
    pub eps_analytic: f64,
    pub eps_rdp: f64,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub curve: Vec<CurveRow>,
    pub rows: Vec<SweepRow>,
}

/// Trains every seed at every grid sigma (unless `curve_only`) and writes
/// the sweep tables. The curve needs no training.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    sweep: &SweepConfig,
    curve_only: bool,
) -> Result<SweepOutcome> {
    sweep.validate()?;
    if cfg.dp.mechanism == Mechanism::NoDp {
        return Err(Error::param("a sweep needs a noisy mechanism, not no_dp"));
    }
    let mut cfg = cfg.clone();
    if let Some(a) = sweep.alpha {
        cfg.dp.alpha = a;
        cfg.dp.validate()?;
    }
    let (train_ws, test_ws) = load_splits(&cfg)?;
    check_shape(&cfg, &train_ws)?;
    let n_fit = carve_validation(&cfg, &train_ws, cfg.seeds[0])?.0.len();

    let mut curve = Vec::new();
    for &sigma in &sweep.sigma_grid {
        let dp = crate::dp::DpConfig {
            sigma_base: sigma,
            ..cfg.dp.clone()
        };
        let l = account(&dp, n_fit, sweep.reference_epochs, sweep.reference_epochs)?;
        curve.push(CurveRow {
            sigma,
            q: l.q,
            steps: l.steps_pre,
            eps_analytic: l.eps_analytic_pre,
            eps_rdp: l.eps_rdp_pre,
        });
    }
    create_dir(&cfg.output_dir)?;
    write_rows(
        &cfg.output_dir.join(format!("sweep_curve_{}.csv", cfg.name)),
        &curve,
    )?;

    let mut rows = Vec::new();
    if !curve_only {
        for &sigma in &sweep.sigma_grid {
            let mut f1 = Vec::new();
            let mut ledger = None;
            for &seed in &cfg.seeds {
                let (outcome, report) = train_seed(&cfg, &train_ws, &test_ws, seed, sigma)?;
                f1.push(report.f1);
                ledger = Some(outcome.ledger);
            }
            let l = ledger.expect("seeds are non-empty");
            rows.push(SweepRow {
                sigma,
                eps_analytic: l.eps_analytic_pre,
                eps_rdp: l.eps_rdp_pre,
                mean_f1: f1.iter().sum::<f64>() / f1.len() as f64,
                f1,
            });
        }
        let path = cfg.output_dir.join(format!("sweep_{}.csv", cfg.name));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["sigma".to_string(), "eps_analytic".into(), "eps_rdp".into()];
        header.extend(cfg.seeds.iter().map(|s| format!("f1_seed{s}")));
        header.push("mean_f1".into());
        w.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![
                r.sigma.to_string(),
                format_eps(r.eps_analytic),
                format_eps(r.eps_rdp),
            ];
            rec.extend(r.f1.iter().map(f64::to_string));
            rec.push(r.mean_f1.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(SweepOutcome { curve, rows })
}
