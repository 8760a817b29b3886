//! Per-method median and interquartile curves across seeds.

use std::path::{Path, PathBuf};

use log::warn;
use matl_core::metrics::{median_iqr, Normalizer};
use matl_core::trainer::MethodVariant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::records::{read_metrics, read_rows, CsvSink};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub iteration: usize,
    pub target_steps: usize,
    pub seeds: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub norm_median: f64,
    pub norm_q25: f64,
    pub norm_q75: f64,
}

pub const SUMMARY_COLUMNS: [&str; 10] = ["method", "iteration", "target_steps", "seeds", "median", "q25", "q75", "norm_median", "norm_q25", "norm_q75"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Shared min/max over every method's median curve.
    MinMax,
    /// Divide by a reference performance.
    Ratio(f64),
}

/// Learning curves of one method: one `eval_metric` series per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodCurves {
    pub method: String,
    pub seeds: Vec<u64>,
    pub curves: Vec<Vec<f64>>,
    pub target_steps: Vec<usize>,
}

/// Sort key that keeps the six variants in their canonical order and puts
/// other labels (weight sweeps) after their base method.
fn method_rank(label: &str) -> (usize, String) {
    let rank = MethodVariant::ALL
        .iter()
        .enumerate()
        .filter(|(_, v)| label == v.name() || label.starts_with(&format!("{}_lambda", v.name())))
        .map(|(i, _)| i)
        .next()
        .unwrap_or(MethodVariant::ALL.len());
    (rank, label.to_string())
}

fn is_seed_csv(path: &Path) -> Option<u64> {
    if path.extension()? != "csv" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

/// Read every method directory of an experiment. Seeds of one method with
/// different lengths are truncated to the shortest.
pub fn load_curves(exp_dir: &Path) -> Result<Vec<MethodCurves>> {
    let entries = std::fs::read_dir(exp_dir).map_err(CliError::io(exp_dir))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort_by_key(|p| method_rank(&p.file_name().unwrap_or_default().to_string_lossy()));
    let mut out = Vec::new();
    for dir in dirs {
        let method = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut files: Vec<(u64, PathBuf)> = std::fs::read_dir(&dir)
            .map_err(CliError::io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| is_seed_csv(&p).map(|s| (s, p)))
            .collect();
        if files.is_empty() {
            continue;
        }
        files.sort();
        let mut seeds = Vec::new();
        let mut runs = Vec::new();
        for (seed, path) in files {
            let rows = read_metrics(&path)?;
            if rows.is_empty() {
                warn!("{} has no rows; skipped", path.display());
                continue;
            }
            seeds.push(seed);
            runs.push(rows);
        }
        if runs.is_empty() {
            continue;
        }
        let len = runs.iter().map(Vec::len).min().unwrap_or(0);
        if runs.iter().any(|r| r.len() != len) {
            warn!("{method}: runs have different lengths; truncating to {len} iterations");
        }
        out.push(MethodCurves {
            method,
            seeds,
            curves: runs.iter().map(|r| r[..len].iter().map(|m| m.eval_metric).collect()).collect(),
            target_steps: runs[0][..len].iter().map(|m| m.target_steps).collect(),
        });
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{} holds no completed runs", exp_dir.display())));
    }
    Ok(out)
}

/// Median and quartiles per iteration, then normalization.
pub fn summarize(methods: &[MethodCurves], mode: Normalization) -> Vec<SummaryRow> {
    let stats: Vec<Vec<(f64, f64, f64)>> = methods
        .iter()
        .map(|m| {
            let len = m.curves.first().map_or(0, Vec::len);
            (0..len).map(|i| median_iqr(&m.curves.iter().map(|c| c[i]).collect::<Vec<_>>())).collect()
        })
        .collect();
    let norm: Box<dyn Fn(f64) -> f64> = match mode {
        Normalization::MinMax => {
            let medians: Vec<Vec<f64>> = stats.iter().map(|s| s.iter().map(|t| t.0).collect()).collect();
            let n = Normalizer::fit(&medians);
            if n.is_degenerate() {
                warn!("median curves are flat; normalized values set to 0.5");
            }
            Box::new(move |v| n.apply(v))
        }
        Normalization::Ratio(reference) => Box::new(move |v| v / reference),
    };
    let mut rows = Vec::new();
    for (m, s) in methods.iter().zip(&stats) {
        for (i, &(median, q25, q75)) in s.iter().enumerate() {
            rows.push(SummaryRow {
                method: m.method.clone(),
                iteration: i,
                target_steps: m.target_steps[i],
                seeds: m.curves.len(),
                median,
                q25,
                q75,
                norm_median: norm(median),
                norm_q25: norm(q25),
                norm_q75: norm(q75),
            });
        }
    }
    rows
}

/// Best final median across the methods of an experiment; the reference
/// for ratio normalization.
pub fn best_final_median(methods: &[MethodCurves]) -> f64 {
    summarize(methods, Normalization::Ratio(1.0))
        .iter()
        .filter(|r| methods.iter().any(|m| m.method == r.method && m.curves[0].len() == r.iteration + 1))
        .map(|r| r.median)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Summarize `exp_dir` into `exp_dir/summary.csv`. With a reference
/// experiment, values are divided by its best final median instead of
/// min/max normalized.
pub fn aggregate(exp_dir: &Path, reference: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let methods = load_curves(exp_dir)?;
    let mode = match reference {
        Some(r) => {
            let best = best_final_median(&load_curves(r)?);
            if !(best.is_finite() && best != 0.0) {
                return Err(CliError::Usage(format!("reference {} has no usable final performance ({best})", r.display())));
            }
            Normalization::Ratio(best)
        }
        None => Normalization::MinMax,
    };
    let rows = summarize(&methods, mode);
    let path = exp_dir.join(SUMMARY_FILE);
    let mut sink = CsvSink::create(&path, &SUMMARY_COLUMNS)?;
    for row in &rows {
        sink.write(row)?;
    }
    Ok(rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path, &SUMMARY_COLUMNS)
}
