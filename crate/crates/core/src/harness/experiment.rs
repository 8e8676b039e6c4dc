use std::fs;
use std::path::Path;

use crate::algorithms::{HParam, HyperParams, Method};
use crate::engine::{run_training, RoundMetrics, RunConfig};
use crate::error::{FedError, Result};
use crate::exec::Executor;

use super::report::{summary_row, write_metrics, write_rows, RunInfo, Status, SummaryRow, METRICS_FILE, RUN_INFO_FILE, SUMMARY_FILE};

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub info: RunInfo,
    pub metrics: Vec<RoundMetrics>,
    pub summary: SummaryRow,
}

impl ExperimentOutcome {
    pub fn diverged(&self) -> bool {
        self.info.status == Status::Diverged
    }
}

/// `key=value` pairs for `keys`, `;`-separated, or `-` when empty.
pub fn hparams_label(hp: &HyperParams, keys: &[HParam]) -> String {
    if keys.is_empty() {
        return "-".into();
    }
    keys.iter()
        .map(|k| format!("{}={}", k.key(), hp.get(*k)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Label listing the method's tunable hyperparameters (the SAM guard is
/// left out).
pub fn default_label(method: Method, hp: &HyperParams) -> String {
    let keys: Vec<HParam> = method
        .hparams()
        .iter()
        .copied()
        .filter(|k| *k != HParam::SamGuard)
        .collect();
    hparams_label(hp, &keys)
}

/// Generates the data, trains, and writes `metrics.jsonl`, `run.json` and a
/// one-row `summary.csv` into `out_dir`. Divergence is recorded in the
/// outcome rather than returned as an error.
pub fn run_experiment(
    cfg: &RunConfig,
    run_id: &str,
    hparams: &str,
    out_dir: &Path,
    exec: &Executor,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let (train, test) = cfg.data.build(cfg.seed)?;
    let (metrics, status, failed_round) = match run_training(cfg, &train, &test, exec) {
        Ok(m) => (m, Status::Completed, None),
        Err(FedError::Diverged { round, completed, .. }) => {
            log::warn!("{run_id}: {} diverged at round {round}", cfg.method);
            (completed, Status::Diverged, Some(round))
        }
        Err(e) => return Err(e),
    };
    let info = RunInfo {
        run_id: run_id.to_string(),
        method: cfg.method.name().to_string(),
        hparams: hparams.to_string(),
        partition: cfg.partition.to_string(),
        seed: cfg.seed,
        rounds: cfg.rounds,
        status,
        failed_round,
    };
    write_metrics(&out_dir.join(METRICS_FILE), &metrics)?;
    fs::write(out_dir.join(RUN_INFO_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
    let summary = summary_row(&info, &metrics);
    write_rows(&out_dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
    Ok(ExperimentOutcome { info, metrics, summary })
}
