//! Aggregation of per-run metrics into per-cycle mean and standard error
//! across seeds, plus a long-format table for plotting.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One parsed row of a run's metrics CSV.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub cycle: usize,
    pub n_labeled: usize,
    pub test_accuracy: f64,
    pub selection_ms: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize, what: &str| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| Error::MalformedRow {
                    path: path.display().to_string(),
                    row: i,
                    message: format!("missing column {what}"),
                })?
                .parse::<f64>()
                .map_err(|_| Error::MalformedRow {
                    path: path.display().to_string(),
                    row: i,
                    message: format!("cannot parse {what}"),
                })
        };
        rows.push(MetricsRow {
            cycle: field(0, "cycle")? as usize,
            n_labeled: field(1, "n_labeled")? as usize,
            test_accuracy: field(2, "test_accuracy")?,
            selection_ms: field(3, "selection_ms")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema {
            path: path.display().to_string(),
            message: "metrics file has no rows".into(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub cycle: usize,
    pub n_labeled: usize,
    pub mean_accuracy: f64,
    /// `sd / sqrt(n_runs)` with the Bessel-corrected standard deviation;
    /// zero by convention for a single run.
    pub stderr_accuracy: f64,
    pub n_runs: usize,
}

/// Per-cycle aggregation across runs. All runs must agree on the cycle
/// structure.
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("no runs to aggregate".into()));
    }
    let cycles = runs[0].len();
    for (i, run) in runs.iter().enumerate() {
        if run.len() != cycles {
            return Err(Error::InvalidInput(format!(
                "run {i} has {} cycles, expected {cycles}",
                run.len()
            )));
        }
    }
    let n = runs.len();
    let mut out = Vec::with_capacity(cycles);
    for c in 0..cycles {
        let values: Vec<f64> = runs.iter().map(|r| r[c].test_accuracy).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        out.push(SummaryRow {
            cycle: runs[0][c].cycle,
            n_labeled: runs[0][c].n_labeled,
            mean_accuracy: mean,
            stderr_accuracy: stderr,
            n_runs: n,
        });
    }
    Ok(out)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("cycle,n_labeled,mean_accuracy,stderr_accuracy,n_runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.cycle, r.n_labeled, r.mean_accuracy, r.stderr_accuracy, r.n_runs
        ));
    }
    out
}

/// Long-format per-run rows for external plotting.
pub fn plot_data_csv(labels: &[String], runs: &[Vec<MetricsRow>]) -> String {
    let mut out = String::from("run,cycle,n_labeled,test_accuracy\n");
    for (label, run) in labels.iter().zip(runs) {
        for row in run {
            out.push_str(&format!(
                "{},{},{},{}\n",
                label, row.cycle, row.n_labeled, row.test_accuracy
            ));
        }
    }
    out
}
