mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgcn_core::DgcnError;

/// Deep Gaussian covariance network regression and forecasting.
#[derive(Debug, Parser)]
#[command(name = "dgcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a CSV table and write the model file plus a JSON run log.
    Train(TrainArgs),
    /// Predict with a saved model; writes row, mean, variance, ci_low, ci_high.
    Predict(PredictArgs),
    /// Repeated k-fold or fixed-split benchmark on a CSV table.
    Crossval(CrossvalArgs),
    /// Forecast the steps after the end of a series.
    Forecast(ForecastArgs),
    /// Fill the missing blocks of a series, each from the values before it.
    Cats(CatsArgs),
    /// Training time against data size on synthetic data.
    BenchTime(BenchTimeArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target column name, or "last".
    #[arg(long, default_value = "last")]
    target: String,
    #[arg(long, default_value = "model.dgcn")]
    out: PathBuf,
    /// Run log path; defaults to the model path with ".log.json" appended.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Neighbours per test point.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Add the predicted noise variance to the latent variance.
    #[arg(long)]
    include_noise: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "last")]
    target: String,
    /// Named protocol: table3-log, table3-normalized-split,
    /// table3-normalized-cv, table3-raw or table4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum, default_value = "dgcn")]
    model: config::ModelArg,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Per-run CSV report.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Summary JSON; also printed to standard output.
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    /// One value per line; blank, NaN or NA lines are missing.
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    steps: usize,
    #[arg(long, value_enum, default_value = "recursive")]
    mode: config::ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CatsArgs {
    #[arg(long)]
    series: PathBuf,
    /// True values of the missing points, one per line, in block order.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// One lag count for all blocks, or one per block (comma separated).
    #[arg(long, value_delimiter = ',')]
    lags: Vec<usize>,
    /// Inclusive 1-based block ranges such as 981-1000,1981-2000;
    /// defaults to the five blocks of the 5000-point competition series.
    #[arg(long, value_delimiter = ',')]
    blocks: Vec<String>,
    #[arg(long, value_enum, default_value = "recursive")]
    mode: config::ModeArg,
    /// Predictions CSV for the missing points.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BenchTimeArgs {
    #[arg(long, value_delimiter = ',', default_value = "400,800,1600,3200")]
    sizes: Vec<usize>,
    /// Batch sizes; "N" means the full training set.
    #[arg(long, value_delimiter = ',', default_value = "200,N")]
    batch: Vec<String>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    n_inputs: usize,
    /// Skip rows whose estimated batch memory exceeds this many MiB.
    #[arg(long, default_value_t = 4096)]
    mem_cap_mib: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Failure with its exit code: 2 usage, 3 data, 4 numerics or training.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DgcnError> for CliError {
    fn from(e: DgcnError) -> Self {
        let msg = e.to_string();
        match e {
            DgcnError::InvalidConfig(_) | DgcnError::InvalidAlpha(_) => CliError::Usage(msg),
            DgcnError::BatchFailed { .. } | DgcnError::NonFiniteLoss { .. } => CliError::Numeric(msg),
            e if e.is_numeric() => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DGCN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DGCN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Cats(a) => commands::cats(a),
        Command::BenchTime(a) => commands::bench_time(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
