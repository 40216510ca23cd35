//! `massweight`: estimate averages from mass-annotated samples, solve for the
//! normalization constant, and run the verification and replicate experiments.
//!
//! Exit status: 0 success, 2 malformed input or invalid parameters, 3 records that
//! contradict each other, 4 failed verification.

#![forbid(unsafe_code)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use massweight::synthetic::Regime;
use massweight::zsolver::{InitialGuess, Method};

mod commands;
mod config;
mod error;
mod manifest;

use error::CliError;

/// Environment variable capping the number of worker threads.
const THREADS_ENV: &str = "MASSWEIGHT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "massweight", version, about = "Mass-aware estimation of averages over discrete distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve Z for a sample file and print both estimates as JSON.
    Estimate(EstimateArgs),
    /// Print the iteration trace of the Z solver.
    Solve(SolveArgs),
    /// Replicate experiment on a synthetic distribution: per-replicate CSV and summary JSON.
    Compare(CompareArgs),
    /// Check the closed-form moments against exhaustive enumeration on random domains.
    Oracle(OracleArgs),
    /// Write a synthetic sample in the input CSV format.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    /// `P(S) / (1 − M′/N)`.
    GoodTuring,
    /// `P(S)`, the mass on the sample.
    #[value(alias = "mass-on-sample")]
    Ps,
}

impl From<InitArg> for InitialGuess {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::GoodTuring => InitialGuess::GoodTuring,
            InitArg::Ps => InitialGuess::MassOnSample,
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Root finder for the fixpoint equation.
    #[arg(long, default_value = "newton")]
    method: Method,

    /// Starting point of the iteration.
    #[arg(long, value_enum, default_value = "good-turing")]
    init: InitArg,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Sample CSV: `key,mass,fvalue` per draw or `key,count,mass,fvalue` per point.
    input: PathBuf,

    #[command(flatten)]
    solver: SolverArgs,

    /// Use this normalization constant instead of solving for it.
    #[arg(long, value_name = "Z")]
    known_z: Option<f64>,

    /// Write the report here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Sample CSV, as for `estimate`.
    input: PathBuf,

    #[command(flatten)]
    solver: SolverArgs,

    /// Write the trace here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Synthetic distribution: a preset, a JSON config file, or explicit parameters.
/// Explicit parameters override the preset or file.
#[derive(Debug, Args)]
struct SyntheticArgs {
    /// Named preset.
    #[arg(long, conflicts_with = "config")]
    regime: Option<Regime>,

    /// JSON file with fields a, b, n_draws, m, seed.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Tail scale.
    #[arg(short = 'a')]
    a: Option<f64>,

    /// Tail exponent.
    #[arg(short = 'b')]
    b: Option<f64>,

    /// Draws per sample.
    #[arg(short = 'N', long = "n-draws")]
    n_draws: Option<u64>,

    /// Oscillations of the test function.
    #[arg(short = 'm')]
    m: Option<u32>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    synthetic: SyntheticArgs,

    #[arg(long, default_value_t = 1000)]
    replicates: u64,

    #[arg(long, default_value = "newton")]
    method: Method,

    /// Directory receiving `replicates.csv` and `summary.json`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Points per random domain.
    #[arg(long, default_value_t = 4)]
    size: usize,

    /// Draws per sample.
    #[arg(long, default_value_t = 6)]
    draws: u64,

    /// Number of random domains.
    #[arg(long, default_value_t = 200)]
    trials: u64,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Negative control: flip the sign of the off-diagonal covariance formula.
    #[arg(long, hide = true)]
    flip_offdiag_sign: bool,

    /// Write the report here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    synthetic: SyntheticArgs,

    /// Write the sample here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Estimate(args) => commands::estimate(args),
        Command::Solve(args) => commands::solve(args),
        Command::Compare(args) => commands::compare(args),
        Command::Oracle(args) => commands::oracle(args),
        Command::Generate(args) => commands::generate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("massweight: {e}");
            e.exit_code()
        }
    }
}
