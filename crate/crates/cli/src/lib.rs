//! Library side of the `kvclt` binary: model-file parsing, configuration,
//! the three commands and report rendering.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod model_file;
pub mod report;

use std::path::Path;

use clap::Parser;

use crate::args::{Cli, Command, Format};
use crate::report::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("--gsc needs a grading in the model file")]
    MissingGrading,
    #[error(transparent)]
    Core(#[from] kvclt_core::Error),
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;

fn execute(command: &Command) -> Result<(Report, Format, Option<&Path>), CliError> {
    let (report, common) = match command {
        Command::Analyze(a) => (commands::analyze(a)?, &a.common),
        Command::Sector(s) => (commands::sector(s)?, &s.common),
        Command::Simulate(s) => (commands::simulate(s)?, &s.common),
    };
    Ok((report, common.format, common.out.as_deref()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code; the report goes to stdout or `--out`, errors to stderr.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args::normalize_args(args)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
        }
    };
    let (report, format, out) = match execute(&cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let text = report.render(format);
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_INPUT;
            }
        }
        None => print!("{text}"),
    }
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_VERDICT
    }
}
