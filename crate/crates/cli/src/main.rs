//! `agiqa`: train, evaluate and ablate the prompt-tuned quality regressor.
//!
//! Usage errors exit with 2 (clap's convention), runtime failures with 1 and
//! a one-line JSON error object on stderr.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use crate::args::{Cli, Command, ScoreMode};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Command::Score(cmd) = &cli.command {
        if cmd.mode == ScoreMode::Tuned && cmd.checkpoint.is_none() {
            Cli::command()
                .error(ErrorKind::MissingRequiredArgument, "--mode tuned requires --checkpoint")
                .exit();
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err)
            if err
                .downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(err) => {
            let kind = match err.downcast_ref::<agiqa_core::Error>() {
                Some(e) => e.kind(),
                None if err.downcast_ref::<std::io::Error>().is_some() => "Io",
                None => "Runtime",
            };
            let message = format!("{err:#}");
            let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
