//! Command-line front end: train, evaluate, sample splits and inspect
//! label words. Failures print one JSON object on stderr.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "adaprompt", version, about = "Prompt-based few-shot relation classification")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the few-shot experiment and write reports and checkpoints.
    Train(config::RunArgs),
    /// Score a checkpoint on the test or dev set.
    Eval(commands::EvalArgs),
    /// Write the seeded few-shot splits only.
    Split(config::RunArgs),
    /// Print the label-word set of every relation.
    Verbalize(commands::VerbalizeArgs),
    /// Write the synthetic dataset and a run config for it.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::config("usage", e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Split(args) => commands::split(args),
        Command::Verbalize(args) => commands::verbalize(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
