//! Command-line driver for the `mmgcn` crate.
//!
//! Exit codes: 0 success, 2 argument or schema error, 3 IO error, 4 data
//! validation error, 5 numerical failure.

pub mod ablation;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod output;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use error::{exit_code, CliError};

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_USAGE } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
