//! Experiment harness: every subcommand writes CSV files (optionally SVG
//! plots) into the output directory.
//!
//! Exit codes: 0 on success, 1 on runtime failures (integration errors,
//! I/O), 2 on usage errors (bad flags or parameter values).

use std::path::PathBuf;

use thiserror::Error;

pub mod args;
pub mod commands;
pub mod csv;
pub mod svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),

    #[error("malformed trajectory file: {0}")]
    Parse(String),

    #[error("cannot write {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Parse(_) | CliError::Io { .. } => 1,
        }
    }
}

/// Parses `argv` (program name first) and runs the selected command,
/// returning the paths of the files written.
pub fn run(argv: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let cli = args::parse(argv)?;
    commands::dispatch(&cli.command)
}
