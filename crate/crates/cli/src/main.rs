//! `oodsplit`: command-line front end for `oodsplit-core`.
//!
//! Exit status: 0 success, 1 usage error, 2 data or integrity error,
//! 3 construction error. Errors go to stderr as `error[<class>]: <message>`.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;
use oodsplit_core::{par, ErrorKind};

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] oodsplit_core::Error),
}

impl CliError {
    fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Usage(_) => ("usage", 1),
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => ("usage", 1),
                ErrorKind::Data => ("data", 2),
                ErrorKind::Construction => ("construction", 3),
            },
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let force = cli.force;
    match &cli.command {
        Command::Fixture(a) => commands::fixture(a, force),
        Command::Split(s) => commands::split(s, force, cli.command.name()),
        Command::Stats(a) => commands::stats(a, force),
        Command::Train(a) => commands::train(a, force),
        Command::Eval(a) => commands::eval(a, force),
        Command::Attribute(a) => commands::attribute(a, force),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let (class, code) = e.class();
    eprintln!("error[{class}]: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let argv = match config::merge(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.trim_start_matches("error: ").trim_end();
            eprintln!("error[usage]: {text}");
            return ExitCode::from(1);
        }
    };
    match par::with_threads(cli.threads, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
