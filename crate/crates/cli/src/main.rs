mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use revode_core::Engine;

use crate::commands::Context;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "revode", version, about = "Reversible Runge-Kutta solvers: experiments and analyses")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config for the subcommand; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the config's PRNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Gradient engine: reversible, full_tape or checkpointed[:c].
    #[arg(long, global = true, value_parser = parse_engine)]
    engine: Option<Engine>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Global error against the exact solution of a linear problem.
    Convergence,
    /// Linear stability verdicts over a (λ, hα) grid.
    Stability,
    /// Compares reversible, full-tape, checkpointed and finite-difference gradients.
    Gradcheck,
    /// Counters and wall times over an engine × solver × size matrix.
    Bench,
    /// Fits an MLP vector field to a trajectory.
    Train,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: revode_core::Error| e.to_string())
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("REVODE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("REVODE_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let ctx = Context {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        engine: cli.engine,
    };
    match cli.command {
        Command::Convergence => commands::convergence::run(&ctx),
        Command::Stability => commands::stability::run(&ctx),
        Command::Gradcheck => commands::gradcheck::run(&ctx),
        Command::Bench => commands::bench::run(&ctx),
        Command::Train => commands::train::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
