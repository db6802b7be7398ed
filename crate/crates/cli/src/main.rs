//! `distillrank` command-line pipelines.
//!
//! Each subcommand is one stage of the distillation pipeline and reads and
//! writes plain files, so intermediate artifacts can be inspected. Every run
//! echoes its fully resolved configuration to stderr as `key=value` lines.

mod commands;
mod options;

use std::process::ExitCode;

use clap::Parser;

use crate::options::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = matches!(
                err.downcast_ref::<distillrank::Error>(),
                Some(distillrank::Error::Config(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
