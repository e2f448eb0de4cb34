//! `pushsync`: run a broker, Source or Destination, or an experiment.

mod args;
mod error;
mod experiments;
mod roles;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log_level.as_str())).init();
    let result = match cli.command {
        Command::Broker(a) => roles::broker(a),
        Command::Source(a) => roles::source(a),
        Command::Dest(a) => roles::dest(a),
        Command::Run(a) => experiments::run(a),
        Command::Generate(a) => experiments::generate(a),
        Command::Diff(a) => experiments::diff(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
