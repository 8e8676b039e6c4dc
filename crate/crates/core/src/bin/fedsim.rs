use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::harness::{
    self, default_label, export_curves, find_metrics_files, parse_config, run_experiment, run_sweep, summarize,
    ParsedConfig,
};
use fedsim::{Executor, FedError};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its metrics.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Threads used for the sampled clients of each round.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run every cell of a sweep and write the seed-averaged table.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Best accuracy and round for every metrics file under a directory.
    Summarize { dir: PathBuf },
    /// Write long-format accuracy curves for every run under a directory.
    Export {
        dir: PathBuf,
        /// Keep only each run's last N rounds.
        #[arg(long)]
        last: Option<usize>,
        /// Defaults to DIR/curves.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(err: &FedError) -> u8 {
    match err {
        FedError::Config(_) | FedError::Parse { .. } => EXIT_CONFIG,
        FedError::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn read_config(path: &Path) -> Result<ParsedConfig, FedError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn run(config: &Path, out: &Path, workers: usize) -> Result<u8, FedError> {
    let ParsedConfig::Run(cfg) = read_config(config)? else {
        return Err(FedError::Config(format!("{} describes a sweep; use `fedsim sweep`", config.display())));
    };
    let run_id = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let exec = Executor::new(workers)?;
    let outcome = run_experiment(&cfg, &run_id, &default_label(cfg.method, &cfg.hparams), out, &exec)?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.serialize(&outcome.summary)?;
    w.flush()?;
    Ok(if outcome.diverged() { EXIT_DIVERGED } else { 0 })
}

fn sweep(spec: &Path, out: &Path, workers: usize) -> Result<u8, FedError> {
    let ParsedConfig::Sweep(spec) = read_config(spec)? else {
        return Err(FedError::Config(format!("{} has no [sweep] section", spec.display())));
    };
    eprintln!("sweep: {} runs -> {} table rows", spec.cells().len(), spec.row_count());
    let report = run_sweep(&spec, out, workers)?;
    print!("{}", std::fs::read_to_string(&report.table_path)?);
    Ok(0)
}

fn summarize_dir(dir: &Path) -> Result<u8, FedError> {
    let files = find_metrics_files(dir)?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let mut failed = false;
    for (path, row) in files.iter().zip(summarize(&files)) {
        match row {
            Ok(row) => w.serialize(row)?,
            Err(e) => {
                failed = true;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    w.flush()?;
    Ok(if failed { EXIT_FAILURE } else { 0 })
}

fn export(dir: &Path, last: Option<usize>, output: Option<PathBuf>) -> Result<u8, FedError> {
    let files = find_metrics_files(dir)?;
    if files.is_empty() {
        return Err(FedError::Config(format!("no metrics files under {}", dir.display())));
    }
    let (points, errors) = export_curves(&files, last);
    for e in &errors {
        eprintln!("{e}");
    }
    let output = output.unwrap_or_else(|| dir.join(harness::report::CURVES_FILE));
    harness::report::write_rows(&output, &points)?;
    eprintln!("wrote {} rows to {}", points.len(), output.display());
    Ok(if errors.is_empty() { 0 } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, workers } => run(&config, &out, workers),
        Command::Sweep { spec, out, workers } => sweep(&spec, &out, workers),
        Command::Summarize { dir } => summarize_dir(&dir),
        Command::Export { dir, last, output } => export(&dir, last, output),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
