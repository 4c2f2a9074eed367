//! Experiment reports and their JSON/CSV serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChurnStats {
    /// Consecutive-step mask pairs compared (steps − 1).
    pub steps_measured: u64,
    /// Pairs whose masks differ in at least one bit.
    pub steps_changed: u64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub train_loss: f64,
    pub dev: MetricRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub final_metrics: MetricRecord,
    pub trajectory: Vec<TrajectoryPoint>,
    pub churn: ChurnStats,
    /// Per-step selected count expected from `p`, if the strategy masks.
    pub expected_selected: Option<usize>,
    /// Steps whose selected count differed from `expected_selected`.
    pub selected_count_violations: u64,
}

/// Mean, max and sample standard deviation (n − 1 denominator, 0 for n = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Aggregate { mean, max, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub fingerprint: String,
    pub config: BTreeMap<String, String>,
    pub num_params: usize,
    pub warnings: Vec<String>,
    pub seeds: Vec<SeedRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl ExperimentReport {
    pub fn compute_aggregates(seeds: &[SeedRecord]) -> BTreeMap<String, Aggregate> {
        let mut out = BTreeMap::new();
        for name in MetricRecord::NAMES {
            let values: Vec<f64> = seeds.iter().filter_map(|s| s.final_metrics.get(name)).collect();
            if values.len() == seeds.len() {
                if let Some(a) = Aggregate::of(&values) {
                    out.insert(name.to_string(), a);
                }
            }
        }
        let churn: Vec<f64> = seeds.iter().map(|s| s.churn.mean).collect();
        if let Some(a) = Aggregate::of(&churn) {
            out.insert("churn".to_string(), a);
        }
        out
    }

    /// Aggregates match a recomputation from the per-seed records.
    pub fn is_consistent(&self) -> bool {
        Self::compute_aggregates(&self.seeds) == self.aggregates
    }

    /// The exact text written to `report.json`.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn metric(&self, name: &str) -> Option<Aggregate> {
        self.aggregates.get(name).copied()
    }
}

const CSV_HEADER: [&str; 13] = [
    "cell",
    "seed",
    "loss",
    "accuracy",
    "f1",
    "mcc",
    "positive_recall",
    "mse",
    "churn_mean",
    "churn_max",
    "churn_steps_changed",
    "churn_steps_measured",
    "selected_count_violations",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(cell: &str, s: &SeedRecord) -> Vec<String> {
    let m = &s.final_metrics;
    vec![
        cell.to_string(),
        s.seed.to_string(),
        m.loss.to_string(),
        opt(m.accuracy),
        opt(m.f1),
        opt(m.mcc),
        opt(m.positive_recall),
        opt(m.mse),
        s.churn.mean.to_string(),
        s.churn.max.to_string(),
        s.churn.steps_changed.to_string(),
        s.churn.steps_measured.to_string(),
        s.selected_count_violations.to_string(),
    ]
}

/// One row per seed × cell.
pub fn write_csv(path: &Path, cells: &[(&str, &ExperimentReport)]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("csv: {other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for (cell, report) in cells {
        for s in &report.seeds {
            w.write_record(csv_row(cell, s)).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `report.json` and `report.csv` into `dir`; returns both paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if report.seeds.is_empty() {
        return Err(Error::Empty("report has no per-seed metrics".into()));
    }
    ensure_dir(dir)?;
    let json = dir.join("report.json");
    let csv = dir.join("report.csv");
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    write_csv(&csv, &[(report.name.as_str(), report)])?;
    Ok((json, csv))
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
