use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunReport, SweepPoint};
use crate::error::{Error, Result};

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub profile: String,
    pub c: usize,
    pub k: usize,
    pub seeds: usize,
    /// Per-seed test accuracies joined with `;`.
    pub per_seed: String,
    pub mean: f64,
    pub std: f64,
}

impl ResultRow {
    pub fn from_report(report: &RunReport) -> Self {
        let accs = report.accuracies();
        Self {
            method: report.method.to_string(),
            profile: report.profile.to_string(),
            c: report.ways,
            k: report.shots,
            seeds: accs.len(),
            per_seed: accs.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            mean: report.mean,
            std: report.std,
        }
    }

    pub fn per_seed_values(&self) -> Result<Vec<f64>> {
        if self.per_seed.is_empty() {
            return Ok(Vec::new());
        }
        self.per_seed
            .split(';')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad per-seed accuracy {v:?}")))
            })
            .collect()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_results_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(ResultRow::from_report(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Accuracy against masking probability, one row per point.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Writes `results.csv` and `report.json` into `dir` and returns their paths.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("report.json");
    write_results_csv(std::slice::from_ref(report), &csv_path)?;
    write_report_json(report, &json_path)?;
    Ok((csv_path, json_path))
}
