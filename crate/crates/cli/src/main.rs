//! `amh` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(
    name = "amh",
    version,
    about = "Attentive modality hopping: train, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated training on a manifest.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(commands::EvalArgs),
    /// Finite-difference gradient check on a tiny synthetic batch.
    Gradcheck(commands::GradcheckArgs),
    /// Write a synthetic corpus.
    Synth(commands::SynthArgs),
    /// Train a hopping model for each hop count in a range.
    Sweep(commands::SweepArgs),
    /// Dump per-hop attention weights for a checkpoint.
    InspectAttention(commands::InspectArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<amh_core::Error>() {
        Some(amh_core::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::InspectAttention(a) => commands::inspect_attention(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
