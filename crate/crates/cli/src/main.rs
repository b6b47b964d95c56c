//! `alpha-merton`: solve, simulate and verify interpretation-dependent
//! Merton policies from a JSON experiment config.

mod commands;
mod config;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn from_core(e: alpha_merton::Error) -> Self {
        use alpha_merton::Error as E;
        let code = match e {
            E::PathFailureBudget { .. } | E::DegenerateEnsemble { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            error: e.into(),
        }
    }

    pub fn io(e: std::io::Error, path: &std::path::Path) -> Self {
        Failure::runtime(format!("cannot write {}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "alpha-merton", version, about = "Interpretation-dependent Merton policies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's simulation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drift correction between two interpretations on a grid.
    Convert(commands::ConvertArgs),
    /// Closed-form policies and value constants as JSON.
    Solve,
    /// Monte Carlo verification table for every configured interpretation.
    Verify,
    /// Plot-ready CSV series.
    Plotdata,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let work = || match &cli.command {
        Command::Convert(args) => commands::convert(g, args),
        Command::Solve => commands::solve(g),
        Command::Verify => commands::verify(g),
        Command::Plotdata => commands::plotdata(g),
    };
    match g.threads {
        Some(0) => Err(Failure::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
