//! Binary classification metrics over model scores.
//!
//! A score at or above the threshold predicts the positive (fall) class.
//! Ratios whose denominator is zero are reported as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// The seven paired metrics, in table order.
pub const METRIC_NAMES: [&str; 7] = [
    "roc_auc",
    "pr_auc",
    "accuracy",
    "specificity",
    "precision",
    "recall",
    "f1",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub accuracy: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::shape("no scores to evaluate"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::param(format!(
            "label {i} is {}, expected 0 or 1",
            labels[i]
        )));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut cc = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cc.tp += 1,
            (true, false) => cc.fp += 1,
            (false, true) => cc.fn_ += 1,
            (false, false) => cc.tn += 1,
        }
    }
    Ok(cc)
}

pub fn point_metrics(cc: &ConfusionCounts) -> PointMetrics {
    let precision = ratio(cc.tp, cc.tp + cc.fp);
    let recall = ratio(cc.tp, cc.tp + cc.fn_);
    PointMetrics {
        accuracy: ratio(cc.tp + cc.tn, cc.total()),
        specificity: ratio(cc.tn, cc.tn + cc.fp),
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// `(macro, weighted)` average of the per-class F1 scores.
pub fn averaged_f1(cc: &ConfusionCounts) -> (f64, f64) {
    let f1_pos = point_metrics(cc).f1;
    let f1_neg = harmonic(ratio(cc.tn, cc.tn + cc.fn_), ratio(cc.tn, cc.tn + cc.fp));
    let support_pos = (cc.tp + cc.fn_) as f64;
    let support_neg = (cc.tn + cc.fp) as f64;
    let total = support_pos + support_neg;
    let weighted = if total == 0.0 {
        0.0
    } else {
        (support_pos * f1_pos + support_neg * f1_neg) / total
    };
    ((f1_pos + f1_neg) / 2.0, weighted)
}

/// Score-sorted groups of tied scores as `(positives, negatives)` counts.
fn tie_groups(scores: &[f64], labels: &[u8], descending: bool) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    if descending {
        order.reverse();
    }
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Exact Mann-Whitney count: returns `(2 * concordant + tied, 2 * P * N)`,
/// whose ratio is the ROC-AUC.
pub fn roc_auc_counts(scores: &[f64], labels: &[u8]) -> Result<(u128, u128)> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        let missing = if pos == 0 { "positive" } else { "negative" };
        return Err(Error::param(format!(
            "ROC-AUC needs both classes; no {missing} labels"
        )));
    }
    let mut below = 0u128;
    let mut twice = 0u128;
    for (p, n) in tie_groups(scores, labels, false) {
        let (p, n) = (p as u128, n as u128);
        twice += 2 * p * below + p * n;
        below += n;
    }
    Ok((twice, 2 * pos * neg))
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (num, den) = roc_auc_counts(scores, labels)?;
    Ok(num as f64 / den as f64)
}

/// Step-wise area under the precision-recall curve: the sum of recall
/// increments times the precision at each distinct score threshold.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    if pos == 0 {
        return Err(Error::param("PR-AUC needs at least one positive label"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    for (p, n) in tie_groups(scores, labels, true) {
        tp += p;
        fp += n;
        if p > 0 {
            area += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
}

impl MetricReport {
    /// The seven paired metrics in [`METRIC_NAMES`] order.
    pub fn seven(&self) -> [f64; 7] {
        [
            self.roc_auc,
            self.pr_auc,
            self.accuracy,
            self.specificity,
            self.precision,
            self.recall,
            self.f1,
        ]
    }
}

/// All metrics for one scored test set. Both classes must be present.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricReport> {
    let cc = confusion(scores, labels, threshold)?;
    let pm = point_metrics(&cc);
    let (macro_f1, weighted_f1) = averaged_f1(&cc);
    Ok(MetricReport {
        roc_auc: roc_auc(scores, labels)?,
        pr_auc: pr_auc(scores, labels)?,
        accuracy: pm.accuracy,
        specificity: pm.specificity,
        precision: pm.precision,
        recall: pm.recall,
        f1: pm.f1,
        macro_f1,
        weighted_f1,
        threshold,
        confusion: cc,
    })
}
