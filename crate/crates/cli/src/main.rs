//! `obsprune`: prune, sweep, evaluate and run toy experiments from the shell.
//!
//! Exit codes: 0 success, 1 compliance-check failure, 2 usage, 3 numerical or
//! runtime failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub const EXIT_OK: u8 = 0;
pub const EXIT_COMPLIANCE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<obsprune::Error> for CliError {
    fn from(e: obsprune::Error) -> Self {
        use obsprune::Error as E;
        let code = match e {
            E::Config(_) | E::TargetTooLarge { .. } | E::Pattern { .. } | E::TooLarge { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<obsprune::StoreError> for CliError {
    fn from(e: obsprune::StoreError) -> Self {
        CliError::runtime(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(String, u8), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    let mut out = String::new();
    let code = match &cli.command {
        Command::Prune(c) => commands::prune::run(c, &mut out)?,
        Command::Sweep(c) => commands::toy::run_sweep(c, &mut out)?,
        Command::Eval(c) => commands::eval::run(c, &mut out)?,
        Command::Toy(c) => commands::toy::run_toy(c, &mut out)?,
        Command::Oracle(c) => commands::hidden::run_oracle(c, &mut out)?,
        Command::GenFixture(c) => commands::hidden::run_gen_fixture(c, &mut out)?,
    };
    Ok((out, code))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((out, code)) => {
            print!("{out}");
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
