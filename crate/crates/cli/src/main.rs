//! `lrqr` command-line tool.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, Outcome};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: solver did not reach the stationarity tolerance; model written with converged=false");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
