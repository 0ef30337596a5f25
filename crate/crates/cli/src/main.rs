//! `whitenseq` command-line driver.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad input from the operator; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "whitenseq",
    version,
    about = "Whitened text embeddings for sequential recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic anisotropic embeddings and interaction sequences.
    Synth(commands::synth::SynthArgs),
    /// Measure the geometry of an embedding file.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Whiten an embedding file.
    Whiten(commands::whiten::WhitenArgs),
    /// Train a recommender and write its best checkpoint.
    Train(commands::train::TrainArgs),
    /// Evaluate a trained run (or the popularity baseline).
    Eval(commands::eval::EvalArgs),
    /// Merge evaluation results of several runs into one table.
    Report(commands::report::ReportArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<whitenseq::Error>()
                .is_some_and(whitenseq::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Diagnose(a) => commands::diagnose::run(a),
        Command::Whiten(a) => commands::whiten::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
