//! Batch front end: `solve`, `verify`, `price` and `recover`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver or output error
//! or a failed verification suite.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "rbsde-lab",
    version,
    about = "Reflected BSDE lattice laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reflected equation and write the solution table.
    Solve(Io),
    /// Run verification suites and write a report.
    Verify {
        #[command(flatten)]
        io: Io,
        /// Suite name, or `all`.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Price American options for a strike family.
    Price(Io),
    /// Recover the market price of risk from option prices.
    Recover(Io),
}

#[derive(clap::Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RBSDE_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "RBSDE_LAB_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve(io) => commands::solve(&RunConfig::load(&io.config)?, &io.out).map(|_| true),
        Command::Verify { io, suite, seed } => commands::verify(
            &RunConfig::load(&io.config)?,
            suite.as_deref(),
            seed,
            &io.out,
        ),
        Command::Price(io) => commands::price(&RunConfig::load(&io.config)?, &io.out).map(|_| true),
        Command::Recover(io) => {
            commands::recover(&RunConfig::load(&io.config)?, &io.out).map(|_| true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed; see report.json");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
