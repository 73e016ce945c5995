//! Command-line front end: simulate, mask, impute, fit and evaluate.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssmimpute::imputers::Method;
use ssmimpute::Error;

use crate::commands::Invocation;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "ssmimpute", version, about = "State-space multiple imputation for single-subject time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset and its truth record.
    Simulate(Common),
    /// Mask outcomes of a fully observed dataset.
    Mask(Common),
    /// Impute missing outcomes and estimate coefficient paths.
    Impute(Common),
    /// Fit and rank declarations on a fully observed dataset.
    Fit(Common),
    /// Run the Monte Carlo benchmark grid.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input data CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Imputation method.
    #[arg(long)]
    method: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed applied to every seeded block of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the large benchmark size for `evaluate`.
    #[arg(long)]
    full_scale: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InsufficientData(_) => 3,
        Error::Numerical { .. } | Error::Degenerate { .. } | Error::Calibration { .. } => 4,
        _ => 2,
    }
}

fn invocation(common: Common) -> Result<Invocation, Error> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    config.apply_seed(common.seed);
    config.validate()?;
    let method = common.method.as_deref().map(str::parse::<Method>).transpose()?;
    let out = common
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::Config("an output directory is required (--out or `out`)".into()))?;
    let data = common.data.or_else(|| config.data.clone());
    Ok(Invocation { config, data, out, method, full_scale: common.full_scale })
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("SSMIMPUTE_THREADS") else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("SSMIMPUTE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => commands::simulate(&invocation(c)?),
        Command::Mask(c) => commands::mask(&invocation(c)?),
        Command::Impute(c) => commands::impute(&invocation(c)?),
        Command::Fit(c) => commands::fit(&invocation(c)?),
        Command::Evaluate(c) => commands::evaluate(&invocation(c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
