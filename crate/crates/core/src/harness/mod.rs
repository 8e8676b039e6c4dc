//! Configuration parsing, single runs, sweeps and reporting.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

pub use config::{parse_config, parse_run_config, parse_sweep_spec, ParsedConfig, SweepSpec};
pub use experiment::{default_label, hparams_label, run_experiment, ExperimentOutcome};
pub use report::{
    best_accuracy, export_curves, find_metrics_files, read_metrics, summarize, write_metrics, CurvePoint, RunInfo,
    Status, SummaryRow,
};
pub use sweep::{run_sweep, SweepCell, SweepReport, SweepRow};
