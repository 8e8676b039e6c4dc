//! Hyperparameter sweeps: every method × grid value × partition × seed.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{HParam, HyperParams, Method};
use crate::data::Skew;
use crate::error::Result;
use crate::exec::Executor;

use super::config::SweepSpec;
use super::experiment::{hparams_label, run_experiment};
use super::report::{write_rows, Status, SummaryRow};

pub const SWEEP_FILE: &str = "sweep.csv";

/// One job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub method: Method,
    pub settings: Vec<(HParam, f64)>,
    pub partition: Skew,
    pub partition_index: usize,
    pub seed: u64,
}

impl SweepCell {
    pub fn hparams_label(&self) -> String {
        let hp = HyperParams::for_method(self.method, &self.settings).expect("validated grid");
        let keys: Vec<HParam> = self.settings.iter().map(|s| s.0).collect();
        hparams_label(&hp, &keys)
    }

    pub fn run_id(&self) -> String {
        let raw = format!("{}_{}_{}_s{}", self.method, self.hparams_label(), self.partition, self.seed);
        raw.chars()
            .map(|c| match c {
                '=' | '(' => '-',
                ';' => '_',
                ')' => ' ',
                c => c,
            })
            .filter(|c| *c != ' ')
            .collect()
    }
}

fn grid_settings(spec: &SweepSpec, method: Method) -> Vec<Vec<(HParam, f64)>> {
    let mut combos = vec![Vec::new()];
    if let Some(axes) = spec.grid.get(&method) {
        for (&key, values) in axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut next = prefix.clone();
                        next.push((key, v));
                        next
                    })
                })
                .collect();
        }
    }
    combos
}

impl SweepSpec {
    /// Jobs in table order, seeds innermost.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            for settings in grid_settings(self, method) {
                for (partition_index, &partition) in self.partitions.iter().enumerate() {
                    for &seed in &self.seeds {
                        cells.push(SweepCell {
                            method,
                            settings: settings.clone(),
                            partition,
                            partition_index,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }

    /// Number of rows the sweep table will have (seeds are averaged).
    pub fn row_count(&self) -> usize {
        self.cells().len() / self.seeds.len().max(1)
    }
}

/// One seed-averaged line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub hparams: String,
    pub partition: String,
    pub seeds: usize,
    /// Mean over seeds of each run's best test accuracy.
    pub best_top1: Option<f64>,
    /// Best round of the seed with the highest best accuracy.
    pub best_round: Option<usize>,
    pub mean_time_per_round: f64,
    pub grad_evals_per_round: f64,
    pub status: Status,
    pub failed_round: Option<usize>,
}

/// A finished sweep: the table plus every job's own summary.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(SweepCell, SummaryRow)>,
    pub table_path: PathBuf,
}

fn run_cell(spec: &SweepSpec, cell: &SweepCell, out_dir: &Path) -> SummaryRow {
    let label = cell.hparams_label();
    let mut cfg = spec.base.clone();
    cfg.method = cell.method;
    cfg.partition = cell.partition;
    cfg.seed = cell.seed;
    let outcome = HyperParams::for_method(cell.method, &cell.settings).and_then(|hp| {
        cfg.hparams = hp;
        let run_id = cell.run_id();
        run_experiment(&cfg, &run_id, &label, &out_dir.join("runs").join(&run_id), &Executor::sequential())
    });
    match outcome {
        Ok(o) => o.summary,
        Err(e) => {
            log::error!("{}: {e}", cell.run_id());
            SummaryRow {
                method: cell.method.to_string(),
                hparams: label,
                partition: cell.partition.to_string(),
                best_top1: None,
                best_round: None,
                mean_time_per_round: 0.0,
                grad_evals_per_round: 0.0,
                status: Status::Failed,
                failed_round: None,
            }
        }
    }
}

fn aggregate(group: &[(SweepCell, SummaryRow)]) -> SweepRow {
    let first = &group[0].1;
    let n = group.len() as f64;
    let bests: Vec<f64> = group.iter().filter_map(|(_, r)| r.best_top1).collect();
    let best_top1 = (!bests.is_empty()).then(|| bests.iter().sum::<f64>() / bests.len() as f64);
    let best_round = group
        .iter()
        .filter_map(|(_, r)| r.best_top1.zip(r.best_round))
        .fold(None::<(f64, usize)>, |acc, (a, r)| match acc {
            Some((b, _)) if b >= a => acc,
            _ => Some((a, r)),
        })
        .map(|(_, r)| r);
    let status = if group.iter().any(|(_, r)| r.status == Status::Failed) {
        Status::Failed
    } else if group.iter().any(|(_, r)| r.status == Status::Diverged) {
        Status::Diverged
    } else {
        Status::Completed
    };
    SweepRow {
        method: first.method.clone(),
        hparams: first.hparams.clone(),
        partition: first.partition.clone(),
        seeds: group.len(),
        best_top1,
        best_round,
        mean_time_per_round: group.iter().map(|(_, r)| r.mean_time_per_round).sum::<f64>() / n,
        grad_evals_per_round: group.iter().map(|(_, r)| r.grad_evals_per_round).sum::<f64>() / n,
        status,
        failed_round: group.iter().filter_map(|(_, r)| r.failed_round).min(),
    }
}

/// Table order: method, then hyperparameter values descending, then the
/// partition's position in the spec.
fn table_order(a: &SweepCell, b: &SweepCell) -> Ordering {
    a.method
        .cmp(&b.method)
        .then_with(|| {
            let va = a.settings.iter().map(|s| s.1);
            let vb = b.settings.iter().map(|s| s.1);
            vb.partial_cmp(va).unwrap_or(Ordering::Equal)
        })
        .then(a.partition_index.cmp(&b.partition_index))
}

/// Runs every job on `workers` threads, then writes the seed-averaged table
/// to `out_dir/sweep.csv`. Jobs that fail or diverge still get a row.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, workers: usize) -> Result<SweepReport> {
    let exec = Executor::new(workers)?;
    std::fs::create_dir_all(out_dir)?;
    let cells = spec.cells();
    log::info!(
        "sweep: {} jobs, {} table rows, {} workers",
        cells.len(),
        spec.row_count(),
        exec.workers()
    );
    let summaries = exec.map(&cells, |cell| run_cell(spec, cell, out_dir));
    let mut runs: Vec<(SweepCell, SummaryRow)> = cells.into_iter().zip(summaries).collect();
    runs.sort_by(|a, b| table_order(&a.0, &b.0).then(a.0.seed.cmp(&b.0.seed)));

    let mut rows = Vec::new();
    let mut start = 0;
    while start < runs.len() {
        let mut end = start + 1;
        while end < runs.len() && table_order(&runs[start].0, &runs[end].0) == Ordering::Equal {
            end += 1;
        }
        rows.push(aggregate(&runs[start..end]));
        start = end;
    }
    let table_path = out_dir.join(SWEEP_FILE);
    write_rows(&table_path, &rows)?;
    Ok(SweepReport {
        rows,
        runs,
        table_path,
    })
}
