//! `keysolve` — keypoint-driven 3D volume registration experiments.
//!
//! Exit codes: 0 success, 2 invalid flags, 3 solver/processing error,
//! 4 file I/O or format error. `KEYSOLVE_THREADS` caps internal
//! parallelism (0 or unset = automatic).

mod commands;
mod report;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use keysolve_core::Error;

#[derive(Parser)]
#[command(name = "keysolve", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving volume onto a fixed volume from keypoint
    /// correspondences.
    Register(commands::RegisterArgs),
    /// Jointly align a population of subjects into a mean (atlas) space.
    Groupwise(commands::GroupwiseArgs),
    /// Generate a synthetic phantom with ground-truth keypoints, labels,
    /// and activation maps.
    Phantom(commands::PhantomArgs),
    /// Apply a stored transform to a volume.
    Warp(commands::WarpArgs),
    /// Compare two label volumes (Dice, Hausdorff distances).
    Metrics(commands::MetricsArgs),
    /// Solve one TPS per regularization strength and report
    /// energy/residual/overlap per row.
    SweepLambda(commands::SweepLambdaArgs),
}

/// CLI failures, split by exit code.
pub enum CliError {
    /// Flag combinations clap cannot express statically; exit 2.
    Usage(String),
    /// Engine errors; exit 3, or 4 for I/O and format errors.
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Core(Error::Io(_)) | CliError::Core(Error::Format { .. }) => 4,
        CliError::Core(_) => 3,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("KEYSOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("KEYSOLVE_THREADS must be a nonnegative integer, got {raw:?}"))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot configure the thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let command = std::env::args().collect::<Vec<_>>().join(" ");
    let outcome = match cli.command {
        Command::Register(args) => commands::register(args, &command),
        Command::Groupwise(args) => commands::groupwise(args, &command),
        Command::Phantom(args) => commands::phantom(args, &command),
        Command::Warp(args) => commands::warp_cmd(args, &command),
        Command::Metrics(args) => commands::metrics(args, &command),
        Command::SweepLambda(args) => commands::sweep_lambda(args, &command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
