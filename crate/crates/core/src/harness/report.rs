//! Metrics files, run summaries and curve export.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::RoundMetrics;
use crate::error::{FedError, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RUN_INFO_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Diverged,
    /// The run could not start (bad configuration, I/O).
    Failed,
}

/// Identity and outcome of one run, written next to its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub method: String,
    pub hparams: String,
    pub partition: String,
    pub seed: u64,
    pub rounds: usize,
    pub status: Status,
    pub failed_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub hparams: String,
    pub partition: String,
    pub best_top1: Option<f64>,
    /// First round attaining `best_top1`.
    pub best_round: Option<usize>,
    pub mean_time_per_round: f64,
    pub grad_evals_per_round: f64,
    pub status: Status,
    pub failed_round: Option<usize>,
}

pub fn write_metrics(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| FedError::Metrics {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Highest test accuracy in the series and the first round reaching it.
pub fn best_accuracy(metrics: &[RoundMetrics]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for m in metrics {
        if let Some(acc) = m.test_top1 {
            if best.is_none_or(|(b, _)| acc > b) {
                best = Some((acc, m.round));
            }
        }
    }
    best
}

pub fn summary_row(info: &RunInfo, metrics: &[RoundMetrics]) -> SummaryRow {
    let best = best_accuracy(metrics);
    let n = metrics.len().max(1) as f64;
    SummaryRow {
        method: info.method.clone(),
        hparams: info.hparams.clone(),
        partition: info.partition.clone(),
        best_top1: best.map(|b| b.0),
        best_round: best.map(|b| b.1),
        mean_time_per_round: metrics.iter().map(|m| m.wall_time_seconds).sum::<f64>() / n,
        grad_evals_per_round: metrics.iter().map(|m| m.grad_evals as f64).sum::<f64>() / n,
        status: info.status,
        failed_round: info.failed_round,
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn run_info_for(metrics_path: &Path) -> Option<RunInfo> {
    let path = metrics_path.with_file_name(RUN_INFO_FILE);
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn run_id_for(metrics_path: &Path) -> String {
    run_info_for(metrics_path).map(|i| i.run_id).unwrap_or_else(|| {
        metrics_path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| metrics_path.display().to_string())
    })
}

/// Every metrics file below `dir`, sorted by path.
pub fn find_metrics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| FedError::Io(e.into()))?;
        if entry.file_type().is_file() && entry.file_name() == METRICS_FILE {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// One summary row per metrics file. A malformed or empty file yields an
/// error in its slot without affecting the others.
pub fn summarize(files: &[PathBuf]) -> Vec<Result<SummaryRow>> {
    files
        .iter()
        .map(|path| {
            let metrics = read_metrics(path)?;
            if best_accuracy(&metrics).is_none() {
                return Err(FedError::Metrics {
                    path: path.clone(),
                    message: "no evaluated rounds".into(),
                });
            }
            let info = run_info_for(path).unwrap_or_else(|| RunInfo {
                run_id: run_id_for(path),
                method: "-".into(),
                hparams: "-".into(),
                partition: "-".into(),
                seed: 0,
                rounds: metrics.len(),
                status: Status::Completed,
                failed_round: None,
            });
            Ok(summary_row(&info, &metrics))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub run_id: String,
    pub round: usize,
    pub top1: f64,
}

/// Long-format `(run_id, round, top1)` rows sorted by run then round. With
/// `last = Some(n)` only each run's final `n` rounds are kept.
pub fn export_curves(files: &[PathBuf], last: Option<usize>) -> (Vec<CurvePoint>, Vec<FedError>) {
    let mut points = Vec::new();
    let mut errors = Vec::new();
    for path in files {
        let metrics = match read_metrics(path) {
            Ok(m) => m,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let run_id = run_id_for(path);
        let cutoff = match (last, metrics.iter().map(|m| m.round).max()) {
            (Some(n), Some(max)) => (max + 1).saturating_sub(n),
            _ => 0,
        };
        points.extend(
            metrics
                .iter()
                .filter(|m| m.round >= cutoff)
                .filter_map(|m| {
                    m.test_top1.map(|top1| CurvePoint {
                        run_id: run_id.clone(),
                        round: m.round,
                        top1,
                    })
                }),
        );
    }
    points.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.round.cmp(&b.round)));
    (points, errors)
}
