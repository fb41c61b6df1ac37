//! Exact one-sided Wilcoxon signed-rank test for paired metric differences.
//!
//! Differences are `b - a`. Zeros are dropped, absolute values are ranked
//! with tied values sharing their average rank, and the statistic `W` is the
//! rank sum of the negative differences. Small `W` is evidence that `b`
//! exceeds `a`; the p-value is the exact null probability `P(W* <= W)` over
//! all `2^n` equally likely sign assignments of the realized ranks.
//!
//! ```
//! use caadp::stats::wilcoxon_one_sided;
//!
//! let r = wilcoxon_one_sided(&[0.016, 0.024, 0.023, 0.021, 0.040, 0.027, 0.033]).unwrap();
//! assert_eq!((r.w_statistic, r.n_effective), (0.0, 7));
//! assert_eq!((r.p_count, r.p_total), (1, 128));
//! ```

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, METRIC_NAMES};

/// Differences within this distance of zero are dropped, and absolute
/// differences within it of each other share a rank.
pub const ZERO_TOLERANCE: f64 = 1e-12;
/// Largest number of nonzero differences the exact test accepts.
pub const MAX_EXACT_N: usize = 25;

/// Paired observations of one dataset, `a` the baseline and `b` the
/// candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDiffSet {
    pub label: String,
    pub names: Vec<String>,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl PairedDiffSet {
    pub fn new(
        label: &str,
        names: Vec<String>,
        a_values: Vec<f64>,
        b_values: Vec<f64>,
    ) -> Result<Self> {
        if names.len() != a_values.len() || names.len() != b_values.len() {
            return Err(Error::shape(format!(
                "{} names, {} baseline values, {} candidate values",
                names.len(),
                a_values.len(),
                b_values.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Schema(format!("metric '{n}' appears twice")));
            }
        }
        Ok(PairedDiffSet {
            label: label.to_string(),
            names,
            a_values,
            b_values,
        })
    }

    pub fn diffs(&self) -> Vec<f64> {
        self.b_values
            .iter()
            .zip(&self.a_values)
            .map(|(b, a)| b - a)
            .collect()
    }

    pub fn mean_diff(&self) -> f64 {
        mean(&self.diffs())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    pub w_statistic: f64,
    pub n_effective: usize,
    /// sign assignments with `W* <= W`
    pub p_count: u64,
    /// `2^n_effective`
    pub p_total: u64,
    pub p_one_sided: f64,
    /// mean over all differences, zeros included
    pub mean_diff: f64,
}

impl WilcoxonResult {
    pub fn significant_at(&self, alpha: f64) -> bool {
        self.p_one_sided <= alpha
    }
}

/// Doubled average ranks of `values` (all positive), in input order.
/// Doubling keeps half ranks integral.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] - values[order[end]] <= ZERO_TOLERANCE
        {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 average to (start + end + 2) / 2
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        start = end + 1;
    }
    ranks
}

/// Exact test of `H1: b > a` from the differences `b - a`.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<WilcoxonResult> {
    if let Some(i) = diffs.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("difference {i}")));
    }
    if diffs.is_empty() {
        return Err(Error::Stats("no differences".into()));
    }
    let nonzero: Vec<f64> = diffs
        .iter()
        .copied()
        .filter(|d| d.abs() > ZERO_TOLERANCE)
        .collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(Error::Stats("no nonzero differences".into()));
    }
    if n > MAX_EXACT_N {
        return Err(Error::Stats(format!(
            "{n} nonzero differences exceed the exact limit of {MAX_EXACT_N}; use a normal approximation"
        )));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d < 0.0)
        .map(|(r, _)| r)
        .sum();

    // counts[s] = number of rank subsets (negative sets) with doubled sum s
    let max_sum: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; max_sum as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let p_count: u64 = counts[..=w2 as usize].iter().sum();
    let p_total = 1u64 << n;
    Ok(WilcoxonResult {
        w_statistic: w2 as f64 / 2.0,
        n_effective: n,
        p_count,
        p_total,
        p_one_sided: p_count as f64 / p_total as f64,
        mean_diff: mean(diffs),
    })
}

/// The test over every set's differences concatenated.
pub fn pooled_test(per_dataset: &[PairedDiffSet]) -> Result<WilcoxonResult> {
    let all: Vec<f64> = per_dataset.iter().flat_map(PairedDiffSet::diffs).collect();
    wilcoxon_one_sided(&all)
}

/// Significance of each p-value against `alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let threshold = alpha / p_values.len().max(1) as f64;
    Ok(p_values.iter().map(|&p| p <= threshold).collect())
}

/// Per-metric differences of seed-averaged reports, in table order.
pub fn diff_table(
    label: &str,
    reports_a: &[MetricReport],
    reports_b: &[MetricReport],
) -> Result<PairedDiffSet> {
    if reports_a.is_empty() || reports_b.is_empty() {
        return Err(Error::Stats(format!("{label}: no reports to compare")));
    }
    let avg = |rs: &[MetricReport]| -> Vec<f64> {
        (0..METRIC_NAMES.len())
            .map(|m| rs.iter().map(|r| r.seven()[m]).sum::<f64>() / rs.len() as f64)
            .collect()
    };
    PairedDiffSet::new(
        label,
        METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        avg(reports_a),
        avg(reports_b),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub result: WilcoxonResult,
    pub significant_raw: bool,
    pub significant_corrected: bool,
}

/// Per-dataset tests, the pooled test, and Bonferroni correction over the
/// number of datasets.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub alpha: f64,
    pub corrected_alpha: f64,
    pub rows: Vec<ComparisonRow>,
    pub pooled: ComparisonRow,
    #[serde(skip)]
    pub sets: Vec<PairedDiffSet>,
}

pub fn compare(sets: &[PairedDiffSet], alpha: f64) -> Result<Comparison> {
    if sets.is_empty() {
        return Err(Error::Stats("no datasets to compare".into()));
    }
    let names = &sets[0].names;
    if let Some(bad) = sets.iter().find(|s| &s.names != names) {
        return Err(Error::Schema(format!(
            "{} has metrics {:?}, expected {names:?}",
            bad.label, bad.names
        )));
    }
    let results = sets
        .iter()
        .map(|s| {
            wilcoxon_one_sided(&s.diffs()).map_err(|e| Error::Stats(format!("{}: {e}", s.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<f64> = results.iter().map(|r| r.p_one_sided).collect();
    let corrected = bonferroni(&ps, alpha)?;
    let corrected_alpha = alpha / sets.len() as f64;
    let rows = sets
        .iter()
        .zip(results)
        .zip(corrected)
        .map(|((s, result), c)| ComparisonRow {
            label: s.label.clone(),
            significant_raw: result.significant_at(alpha),
            significant_corrected: c,
            result,
        })
        .collect();
    let pooled = pooled_test(sets)?;
    Ok(Comparison {
        alpha,
        corrected_alpha,
        rows,
        pooled: ComparisonRow {
            label: "Pooled".into(),
            significant_raw: pooled.significant_at(alpha),
            significant_corrected: pooled.significant_at(corrected_alpha),
            result: pooled,
        },
        sets: sets.to_vec(),
    })
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl Comparison {
    /// Dataset, W, p, raw and corrected significance, mean difference.
    pub fn render_tests(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>11} {:>8} {:>10} {:>13} {:>10}",
            "Dataset",
            "W-statistic",
            "p-value",
            format!("Sig({})", self.alpha),
            "Sig(corrected)",
            "Mean Diff."
        );
        for row in self.rows.iter().chain(std::iter::once(&self.pooled)) {
            let r = &row.result;
            let _ = writeln!(
                out,
                "{:<12} {:>11.4} {:>8.4} {:>10} {:>13} {:>+10.4}",
                row.label,
                r.w_statistic,
                r.p_one_sided,
                mark(row.significant_raw),
                mark(row.significant_corrected),
                r.mean_diff
            );
        }
        let _ = writeln!(
            out,
            "corrected threshold: {}/{} = {:.4}",
            self.alpha,
            self.rows.len(),
            self.corrected_alpha
        );
        out
    }

    /// Metric-by-dataset grid of differences with row and column means.
    pub fn render_diffs(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "Metric");
        for s in &self.sets {
            let _ = write!(out, " {:>10}", s.label);
        }
        let _ = writeln!(out, " {:>10}", "Mean");
        let diffs: Vec<Vec<f64>> = self.sets.iter().map(PairedDiffSet::diffs).collect();
        for (m, name) in self.sets[0].names.iter().enumerate() {
            let _ = write!(out, "{name:<12}");
            let row: Vec<f64> = diffs.iter().map(|d| d[m]).collect();
            for v in &row {
                let _ = write!(out, " {v:>+10.4}");
            }
            let _ = writeln!(out, " {:>+10.4}", mean(&row));
        }
        let _ = write!(out, "{:<12}", "Mean");
        for d in &diffs {
            let _ = write!(out, " {:>+10.4}", mean(d));
        }
        let all: Vec<f64> = diffs.concat();
        let _ = writeln!(out, " {:>+10.4}", mean(&all));
        out
    }

    /// The tests table as CSV.
    pub fn tests_csv(&self) -> String {
        let mut out = String::from("dataset,w_statistic,n_effective,p_count,p_total,p_one_sided,sig_raw,sig_corrected,mean_diff\n");
        for row in self.rows.iter().chain(std::iter::once(&self.pooled)) {
            let r = &row.result;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.label,
                r.w_statistic,
                r.n_effective,
                r.p_count,
                r.p_total,
                r.p_one_sided,
                row.significant_raw,
                row.significant_corrected,
                r.mean_diff
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(doubled_ranks(&[0.3, 0.1, 0.2]), vec![6, 2, 4]);
        assert_eq!(doubled_ranks(&[0.001, 0.5, 0.001]), vec![3, 6, 3]);
        assert_eq!(doubled_ranks(&[1.0; 4]), vec![5; 4]);
    }

    #[test]
    fn dataset_examples() {
        let mobi = [0.011, 0.103, 0.011, -0.001, 0.022, 0.136, 0.075];
        let r = wilcoxon_one_sided(&mobi).unwrap();
        assert_eq!((r.w_statistic, r.p_count, r.p_total), (1.0, 2, 128));
        let up = [0.0, 0.010, 0.004, 0.001, 0.069, 0.102, 0.085];
        let r = wilcoxon_one_sided(&up).unwrap();
        assert_eq!(
            (r.n_effective, r.w_statistic, r.p_count, r.p_total),
            (6, 0.0, 1, 64)
        );
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let err = wilcoxon_one_sided(&[0.0, 0.0]).unwrap_err().to_string();
        assert!(err.contains("no nonzero differences"));
        assert!(wilcoxon_one_sided(&[0.1; 26]).is_err());
        assert!(wilcoxon_one_sided(&[]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        let three = bonferroni(&[0.0156, 0.02, 0.0078], 0.05).unwrap();
        assert_eq!(three, vec![true, false, true]);
        assert_eq!(bonferroni(&[0.05], 0.05).unwrap(), vec![true]);
        assert_eq!(bonferroni(&[0.0501], 0.05).unwrap(), vec![false]);
    }

    #[test]
    fn identical_reports_give_zero_diffs() {
        let r = crate::metrics::evaluate(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 1, 0], 0.5).unwrap();
        let set = diff_table("x", &[r, r], &[r]).unwrap();
        assert!(set.diffs().iter().all(|&d| d == 0.0));
        assert!(compare(&[set], 0.05).is_err());
    }

    #[test]
    fn duplicate_metric_names_rejected() {
        let names = vec!["f1".to_string(), "f1".to_string()];
        assert!(PairedDiffSet::new("x", names, vec![0.0; 2], vec![0.0; 2]).is_err());
    }
}
