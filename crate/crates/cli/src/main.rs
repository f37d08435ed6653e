use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

mod args;
mod commands;

use args::Cli;

/// Exit 1.
pub const EXIT_USAGE: u8 = 1;
/// Exit 2.
pub const EXIT_DATA: u8 = 2;
/// Exit 3.
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(maskbench::Error),
    Internal(String),
}

impl From<maskbench::Error> for CliError {
    fn from(e: maskbench::Error) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

fn run(mut cli: Cli) -> Result<(), CliError> {
    cli.merge_config()?;
    let jobs = cli.global.jobs.unwrap_or(0);
    if cli.global.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("maskbench: {e}");
            ExitCode::from(e.code())
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
