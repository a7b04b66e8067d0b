mod commands;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "svine", version, about = "Stationary vine copula models for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit margins, structure and pair-copulas to a CSV sample.
    Fit(FitArgs),
    /// Simulate an unconditional path from a fitted model.
    Simulate(SimulateArgs),
    /// Monte-Carlo forecasts given the most recent observations.
    Forecast(ForecastArgs),
    /// Rolling out-of-sample evaluation on random portfolios.
    Backtest(BacktestArgs),
    /// Check whether a structure is a stationary vine.
    CheckStructure(CheckArgs),
    /// Print a built-in structure as JSON.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelOptions {
    /// Markov order p.
    #[arg(long = "markov", short = 'p', default_value_t = 1)]
    pub markov: usize,
    /// Margin treatment: `par` (skew-t) or `semipar` (empirical).
    #[arg(long, default_value = "semipar")]
    pub mode: String,
    /// `auto`, or a file holding a structure or a fitted model.
    #[arg(long, default_value = "auto")]
    pub structure: String,
    /// Comma-separated pair-copula families, e.g. `gaussian,clayton_90,student_t`, or `default`.
    #[arg(long, default_value = "default")]
    pub families: String,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelOptions,
    /// Output model file.
    #[arg(long, short = 'o', default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub model: PathBuf,
    /// Number of time points.
    #[arg(long, short = 'n')]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    pub model: PathBuf,
    /// CSV whose last p rows are conditioned on.
    pub history: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    /// Simulations per forecast; defaults to 10 times the estimation sample size.
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    /// Comma-separated functionals: `mean`, `quantile:0.05`, `q0.01`.
    #[arg(long, default_value = "mean,q0.05,q0.95")]
    pub functionals: String,
    /// Comma-separated confidence levels of bootstrap bands.
    #[arg(long, default_value = "0.9")]
    pub levels: String,
    /// Number of bootstrap replicates for parameter-uncertainty bands; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Estimation sample, required with `--bootstrap`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Multiplier block length; defaults to floor(T^(1/3)).
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `json` or `csv`.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Also write all simulated paths to this CSV.
    #[arg(long)]
    pub sims_out: Option<PathBuf>,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    pub data: PathBuf,
    /// JSON configuration; command-line flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Steps ahead, or `day` (1) / `week` (5).
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    /// Comma-separated subset of crps, logs, var95, var99.
    #[arg(long)]
    pub measures: Option<String>,
    #[arg(long)]
    pub portfolios: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub weight_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub weight_hi: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "markov", short = 'p')]
    pub markov: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub structure: Option<String>,
    #[arg(long)]
    pub families: Option<String>,
    /// Summary table; standard output when omitted.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Per-origin scores in long format.
    #[arg(long)]
    pub series_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// S-vine specification or explicit structure JSON.
    pub structure: PathBuf,
    /// Number of time points used to expand a specification.
    #[arg(long = "T", short = 'T', default_value_t = 4)]
    pub t_len: usize,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    /// `m-vine`, `d-vine` or `copar`.
    pub name: String,
    #[arg(long, short = 'd', default_value_t = 2)]
    pub d: usize,
    #[arg(long = "markov", short = 'p', default_value_t = 1)]
    pub markov: usize,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SVINE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("SVINE_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::usage("SVINE_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Forecast(a) => commands::forecast(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::CheckStructure(a) => commands::check_structure(&a),
        Command::Fixture(a) => commands::fixture(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io { message, .. }) if message.contains("Broken pipe") => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
