//! Command-line front end: CSV ingestion, fit files, run manifests and the
//! `fit`, `tune`, `predict`, `simulate` and `bench` subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod error;
pub mod ingest;

use args::{Cli, Command};
pub use error::{CliError, Result};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Tune(a) => commands::tune(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Bench(a) => commands::bench(a),
    }
}
