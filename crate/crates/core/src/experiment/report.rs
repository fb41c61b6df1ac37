use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_input, write_json, RunRecord};
use crate::accountant::{format_eps, PrivacyLedger};
use crate::error::{Error, Result};

/// One completed run in the consolidated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub model_id: String,
    pub dataset: String,
    pub mechanism: String,
    pub seed: u64,
    pub sigma_base: f64,
    pub alpha: f64,
    /// "accounted", or "unaccounted" when the run has no ledger
    pub status: String,
    pub eps_rdp_post: Option<String>,
    pub eps_analytic_post: Option<String>,
    pub epochs_actual: usize,
    pub clip_mode: Option<String>,
    pub noise_scale_mode: Option<String>,
    pub sensitivity_caveat: Option<bool>,
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

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub rows: Vec<ReportRow>,
    pub unaccounted: usize,
    /// the epsilon comparison table
    pub table: String,
    /// run directories skipped for lack of `metrics.json`
    pub skipped: Vec<String>,
}

fn name_of<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn read_row(dir: &Path, run: &str) -> Result<Option<ReportRow>> {
    let metrics = dir.join("metrics.json");
    if !metrics.exists() {
        return Ok(None);
    }
    let rec: RunRecord = serde_json::from_str(&read_input(&metrics)?)?;
    let ledger_path = dir.join("ledger.json");
    let ledger: Option<PrivacyLedger> = if ledger_path.exists() {
        Some(serde_json::from_str(&read_input(&ledger_path)?)?)
    } else {
        None
    };
    let m = rec.metrics;
    Ok(Some(ReportRow {
        run: run.to_string(),
        model_id: rec.model_id,
        dataset: rec.dataset,
        mechanism: rec.mechanism.as_str().to_string(),
        seed: rec.seed,
        sigma_base: rec.sigma_base,
        alpha: rec.alpha,
        status: if ledger.is_some() {
            "accounted"
        } else {
            "unaccounted"
        }
        .to_string(),
        eps_rdp_post: ledger.as_ref().map(|l| format_eps(l.eps_rdp_post)),
        eps_analytic_post: ledger.as_ref().map(|l| format_eps(l.eps_analytic_post)),
        epochs_actual: rec.epochs_actual,
        clip_mode: ledger.as_ref().map(|l| name_of(&l.clip_mode)),
        noise_scale_mode: ledger.as_ref().map(|l| name_of(&l.noise_scale_mode)),
        sensitivity_caveat: ledger.as_ref().map(|l| l.sensitivity_caveat),
        roc_auc: m.roc_auc,
        pr_auc: m.pr_auc,
        accuracy: m.accuracy,
        specificity: m.specificity,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        macro_f1: m.macro_f1,
        weighted_f1: m.weighted_f1,
    }))
}

fn mean_eps(cells: &[&Option<String>]) -> String {
    let vals: Option<Vec<f64>> = cells
        .iter()
        .map(|c| {
            c.as_deref().and_then(|s| {
                if s == "inf" {
                    Some(f64::INFINITY)
                } else {
                    s.parse().ok()
                }
            })
        })
        .collect();
    match vals {
        None => "unaccounted".to_string(),
        Some(v) => {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            if m.is_infinite() {
                "inf".to_string()
            } else {
                format!("{m:.4}")
            }
        }
    }
}

/// One line per (dataset, model): seed-averaged epsilon after training,
/// with the accounting conventions alongside.
fn render_table(rows: &[ReportRow]) -> String {
    let mut groups: Vec<(&str, &str, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.dataset && g.1 == r.model_id)
        {
            Some(g) => g.2.push(r),
            None => groups.push((&r.dataset, &r.model_id, vec![r])),
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<22} {:<8} {:>6} {:>14} {:>14} {:>9}  conventions",
        "Dataset",
        "Model",
        "Mech.",
        "Seeds",
        "eps (RDP)",
        "eps (analytic)",
        "E_actual",
    );
    for (dataset, model, runs) in groups {
        let rdp: Vec<_> = runs.iter().map(|r| &r.eps_rdp_post).collect();
        let ana: Vec<_> = runs.iter().map(|r| &r.eps_analytic_post).collect();
        let epochs = runs.iter().map(|r| r.epochs_actual as f64).sum::<f64>() / runs.len() as f64;
        let first = runs[0];
        let conventions = match (&first.clip_mode, &first.noise_scale_mode) {
            (Some(c), Some(n)) => {
                let caveat = if first.sensitivity_caveat == Some(true) {
                    ", nominal sensitivity (caveat)"
                } else {
                    ""
                };
                format!("{c}, {n}{caveat}")
            }
            _ => "no ledger".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<10} {:<22} {:<8} {:>6} {:>14} {:>14} {:>9.1}  {}",
            dataset,
            model,
            first.mechanism,
            runs.len(),
            mean_eps(&rdp),
            mean_eps(&ana),
            epochs,
            conventions
        );
    }
    let _ = writeln!(
        out,
        "delta = 1e-5 unless configured otherwise; eps after the best-checkpoint epoch"
    );
    out
}

/// Merges every run under `<dir>/runs` into `report.csv`, `report.json`
/// and `report_eps.txt` (written to `out`, or `dir`).
pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<ReportOutcome> {
    let runs_dir = dir.join("runs");
    let mut entries: Vec<_> = match fs::read_dir(&runs_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for run in &entries {
        match read_row(&runs_dir.join(run), run)? {
            Some(r) => rows.push(r),
            None => skipped.push(run.clone()),
        }
    }
    if rows.is_empty() {
        return Err(Error::Missing(format!(
            "no completed runs under {}",
            runs_dir.display()
        )));
    }
    rows.sort_by(|a, b| {
        (
            &a.dataset,
            &a.mechanism,
            a.sigma_base.to_bits(),
            a.seed,
            &a.model_id,
        )
            .cmp(&(
                &b.dataset,
                &b.mechanism,
                b.sigma_base.to_bits(),
                b.seed,
                &b.model_id,
            ))
    });
    let table = render_table(&rows);
    let out = out.unwrap_or(dir);
    super::create_dir(out)?;
    let csv_path = out.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&out.join("report.json"), &rows)?;
    let table_path = out.join("report_eps.txt");
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    let unaccounted = rows.iter().filter(|r| r.status == "unaccounted").count();
    Ok(ReportOutcome {
        rows,
        unaccounted,
        table,
        skipped,
    })
}
