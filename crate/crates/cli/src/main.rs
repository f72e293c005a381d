#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod common;
mod evaluate;
mod phantom;
mod preprocess;
mod synthesize;
mod train;

use common::UsageError;

#[derive(Parser, Debug)]
#[command(name = "dualgan", version, about = "CT-to-MR synthesis with paired and unpaired adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a deterministic two-domain phantom dataset with a manifest.
    PhantomGen(phantom::Args),
    /// Window, resample and slice raw volumes into 8-bit prepared volumes.
    Preprocess(preprocess::Args),
    /// Train the four networks from a TOML run configuration.
    Train(train::Args),
    /// Translate prepared CT slices to MR with a trained checkpoint.
    Synthesize(synthesize::Args),
    /// Compare synthesized and reference slices (MAE, PSNR).
    Evaluate(evaluate::Args),
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<UsageError>().is_some() || matches!(cause.downcast_ref::<dualgan_core::Error>(), Some(dualgan_core::Error::Config(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PhantomGen(args) => phantom::run(args),
        Command::Preprocess(args) => preprocess::run(args),
        Command::Train(args) => train::run(args),
        Command::Synthesize(args) => synthesize::run(args),
        Command::Evaluate(args) => evaluate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage_error(&err) { 2 } else { 1 })
        }
    }
}
