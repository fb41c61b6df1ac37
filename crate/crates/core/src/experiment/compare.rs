use std::fs;
use std::path::Path;

use super::{create_dir, read_input};
use crate::error::{Error, Result};
use crate::metrics::METRIC_NAMES;
use crate::stats::{compare, Comparison, PairedDiffSet};

/// Significance level before correction.
const ALPHA: f64 = 0.05;

/// Seed-averaged metric values per dataset, in first-appearance order.
fn dataset_means(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = read_input(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} has no '{name}' column", path.display())))
    };
    let dataset_col = column("dataset")?;
    let metric_cols = METRIC_NAMES
        .iter()
        .map(|m| column(m))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let dataset = record.get(dataset_col).unwrap_or_default().to_string();
        let values = metric_cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or_default();
                cell.parse::<f64>().map_err(|_| {
                    Error::Schema(format!(
                        "{} row {}: '{}' is not a number",
                        path.display(),
                        line + 2,
                        cell
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match groups.iter_mut().find(|g| g.0 == dataset) {
            Some(g) => {
                g.1.iter_mut().zip(&values).for_each(|(s, v)| *s += v);
                g.2 += 1;
            }
            None => groups.push((dataset, values, 1)),
        }
    }
    if groups.is_empty() {
        return Err(Error::Schema(format!(
            "{} has no result rows",
            path.display()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|(d, sums, n)| (d, sums.into_iter().map(|s| s / n as f64).collect()))
        .collect())
}

/// Pairs the baseline file `a` with the candidate file `b` per dataset.
pub fn read_results_sets(a: &Path, b: &Path) -> Result<Vec<PairedDiffSet>> {
    let base = dataset_means(a)?;
    let cand = dataset_means(b)?;
    if base.len() != cand.len() {
        return Err(Error::Schema(format!(
            "{} covers {} datasets, {} covers {}",
            a.display(),
            base.len(),
            b.display(),
            cand.len()
        )));
    }
    let names: Vec<String> = METRIC_NAMES.iter().map(|s| s.to_string()).collect();
    base.into_iter()
        .map(|(dataset, a_values)| {
            let b_values = cand
                .iter()
                .find(|c| c.0 == dataset)
                .map(|c| c.1.clone())
                .ok_or_else(|| {
                    Error::Schema(format!("dataset '{dataset}' missing from {}", b.display()))
                })?;
            PairedDiffSet::new(&dataset, names.clone(), a_values, b_values)
        })
        .collect()
}

/// Runs the per-dataset and pooled tests. With `out`, writes
/// `compare_tests.csv`, `compare_tests.txt` and `compare_diffs.txt` there.
pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<Comparison> {
    let sets = read_results_sets(a, b)?;
    let cmp = compare(&sets, ALPHA)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("compare_tests.csv", cmp.tests_csv())?;
        write("compare_tests.txt", cmp.render_tests())?;
        write("compare_diffs.txt", cmp.render_diffs())?;
    }
    Ok(cmp)
}
