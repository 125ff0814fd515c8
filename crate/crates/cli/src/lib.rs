//! `bdfadj`: integrate, differentiate and verify from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
//! 3 verification failure.

// `!(x <= limit)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{ExperimentConfig, Flags, Mode, ProblemName, RunSettings};

#[derive(Debug, Parser)]
#[command(
    name = "bdfadj",
    version,
    about = "BDF integration with discrete and weak adjoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a problem and write the tape (--tape).
    Integrate(Flags),
    /// Run the adjoint sweep on a tape (--tape) and write the adjoint file
    /// (--adjoint-file) plus a plotting table (--out, default next to it).
    Adjoint(Flags),
    /// Weak-adjoint errors over a stepsize or tolerance sweep as CSV (--out, default stdout).
    Converge(Flags),
    /// Check a tape and its adjoint file against the discrete optimality
    /// conditions; writes a JSON report (--out, default stdout).
    Verify(Flags),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("solver failure: {0}")]
    Solver(#[from] bdf_weak_adjoint::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Integrate(f) => commands::integrate(&f.resolve()?, out),
        Command::Adjoint(f) => commands::adjoint(&f.resolve()?, out),
        Command::Converge(f) => commands::converge(&f.resolve()?, out),
        Command::Verify(f) => commands::verify(&f.resolve()?, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
