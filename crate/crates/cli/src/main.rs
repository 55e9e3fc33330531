//! `fungp`: synthesize datasets, design experiments, fit and validate the
//! functional-input map emulator.
//!
//! Every subcommand takes an optional `--config` JSON document whose fields
//! the flags override, and writes its resolved config and a manifest of
//! content hashes into its output directory. Exit status is 0 on success, 1
//! for invalid data or configuration and 2 for numerical failures.

mod commands;
mod dataset;
mod error;
mod io;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{doe, fit, loo, metrics, predict, synth};

#[derive(Debug, Parser)]
#[command(name = "fungp", version, about = "Gaussian-process emulation of spatial maps from functional inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Synth(synth::SynthArgs),
    /// Fit kernel hyperparameters by maximum likelihood
    Fit(fit::FitArgs),
    /// Forecast maps of new scenarios with a fitted model
    Predict(predict::PredictArgs),
    /// Leave-one-scenario-out validation
    Loo(loo::LooArgs),
    /// Select spatial locations (and optionally scenarios) for training
    Doe(doe::DoeArgs),
    /// Score predictions against observed values
    Metrics(metrics::MetricsArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Loo(a) => loo::run(a),
        Command::Doe(a) => doe::run(a),
        Command::Metrics(a) => metrics::run(a),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
