//! `sae`: fit small area predictors, run the simulation study and merge
//! results.
//!
//! Exit codes: 0 success, 2 invalid input, 3 non-convergence, 1 anything
//! else. Failures also print a one-line JSON error object on stderr.

mod args;
mod config;
mod fit;
mod manifest;
mod report;
mod simulate;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use sae_core::SaeError;

use args::{Cli, Command};

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            kind: "non_convergence",
            message: message.into(),
        }
    }
}

impl From<SaeError> for CliError {
    fn from(e: SaeError) -> Self {
        let code = match &e {
            e if e.is_convergence() => 3,
            SaeError::Io(_) | SaeError::Csv(_) | SaeError::Json(_) => 2,
            e if e.is_validation() => 2,
            _ => 1,
        };
        CliError {
            code,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        SaeError::from(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        SaeError::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        SaeError::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn report_error(err: &CliError, out: Option<&Path>) {
    let body = serde_json::json!({
        "error": err.kind,
        "message": err.message,
        "exit_code": err.code,
    });
    eprintln!("{body}");
    if let Some(dir) = out {
        if dir.is_dir() {
            let _ = std::fs::write(dir.join("error.json"), format!("{body:#}\n"));
        }
    }
}

fn main() -> ExitCode {
    let argv = match config::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            report_error(&e, None);
            return ExitCode::from(e.code);
        }
    };
    let cli = Cli::parse_from(argv.clone());
    if let Some(jobs) = cli.command.jobs() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    let out = cli.command.out_dir().map(Path::to_path_buf);
    let result = match &cli.command {
        Command::Fit(a) => fit::run(a, &argv),
        Command::Simulate(a) => simulate::run(a, &argv),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, out.as_deref());
            ExitCode::from(e.code)
        }
    }
}
