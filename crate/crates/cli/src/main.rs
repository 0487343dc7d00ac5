mod commands;
mod config;
mod failure;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Flags;

/// Model recycling by weight averaging on synthetic multi-domain tasks.
#[derive(Parser)]
#[command(name = "ratatouille", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic suite.
    Gen(Flags),
    /// Pre-train, linear-probe, fine-tune or inter-train a checkpoint.
    Train(Flags),
    /// Combine checkpoints in weight space.
    Merge(Flags),
    /// Mode connectivity curves and diversity matrices.
    Analyze(Flags),
    /// Leave-one-domain-out benchmark and ablations.
    Bench(Flags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(f) => commands::gen(f),
        Command::Train(f) => commands::train(f),
        Command::Merge(f) => commands::merge_cmd(f),
        Command::Analyze(f) => commands::analyze(f),
        Command::Bench(f) => commands::bench_cmd(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
