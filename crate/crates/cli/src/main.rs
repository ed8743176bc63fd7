mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Fine-Gray neural additive model for competing risks.
#[derive(Debug, Parser)]
#[command(name = "fgnam", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Schema TOML naming the time/event columns and preprocessing.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model checkpoint (predict, evaluate, explain).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated prediction times.
    #[arg(long, global = true, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Fit a model; writes checkpoint.json, baseline.csv and train_report.json.
    Train,
    /// K-fold cross-validation; writes cv_folds.csv and cv_aggregate.csv.
    Cv,
    /// Cumulative incidence at --times; writes cif.csv.
    Predict,
    /// Metrics of a checkpoint on labelled data; writes metrics.csv.
    Evaluate,
    /// Shape curves and importances as CSV and SVG.
    Explain,
    /// Synthetic data with known effects; writes dataset.csv and truth.csv.
    Simulate,
    /// Cross-validates every combination of the [sweep] lists; writes sweep.csv.
    Sweep,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<fgnam::Error> for CliError {
    fn from(err: fgnam::Error) -> Self {
        use fgnam::Error as E;
        let code = match err {
            E::Config(_) | E::Schema(_) | E::Io { .. } => 2,
            _ => 1,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = commands::RunContext::new(&cli.common).and_then(|ctx| {
        let jobs = ctx.jobs;
        fgnam::par::with_jobs(jobs, || match cli.command {
            Command::Train => commands::train(&ctx),
            Command::Cv => commands::cv(&ctx),
            Command::Predict => commands::predict(&ctx),
            Command::Evaluate => commands::evaluate(&ctx),
            Command::Explain => commands::explain(&ctx),
            Command::Simulate => commands::simulate(&ctx),
            Command::Sweep => commands::sweep(&ctx),
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
