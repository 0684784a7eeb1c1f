//! `rbmp`: estimates, Monte-Carlo verification sweeps and pooling models.

mod error;
mod estimate;
mod mobility;
mod output;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use error::{CliError, CliResult, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "rbmp", version = output::VERSION, about = "Expected optimal costs of random bipartite matching")]
struct Cli {
    /// Worker threads for sweeps (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate an estimator at one problem size.
    Estimate(estimate::EstimateArgs),
    /// Run a Monte-Carlo verification sweep from a config file.
    Verify(verify::VerifyArgs),
    /// Demand-pooling models for ride-hailing.
    #[command(subcommand)]
    Mobility(mobility::MobilityCommand),
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("RBMP_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Estimate(a) => estimate::run(a),
        Command::Verify(a) => verify::run(a),
        Command::Mobility(c) => mobility::run(c),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rbmp: {e}");
            e.exit_code()
        }
    }
}
