//! `iblearn` command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 X independent of Y (nothing is
//! learnable at any β), 3 an iterative solver hit its iteration limit.

mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, ExperimentConfig};
use crate::commands::{Context, Failure};

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, config_seed, config_out) = match (cli.command, &cli.config) {
        (Some(_), Some(_)) => {
            return Err(Failure::input("give either a subcommand or --config, not both"));
        }
        (Some(command), None) => (command, None, None),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("reading {}: {e}", path.display())))?;
            let config: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Failure::input(format!("invalid config {}: {e}", path.display())))?;
            (config.command, config.seed, config.out_dir)
        }
        (None, None) => return Err(Failure::input("no subcommand given; see --help")),
    };
    let ctx = Context {
        seed: cli.seed.or(config_seed).unwrap_or(0),
        out_dir: cli.out_dir.or(config_out).unwrap_or_else(|| PathBuf::from("out")),
    };
    commands::dispatch(&ctx, command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
