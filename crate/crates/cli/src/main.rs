mod args;
mod commands;

use std::process::ExitCode;

use args::{parse, Command, ParseFailure};
use clap::error::ErrorKind;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_CHECK: u8 = 3;

/// An error plus the exit status it maps to.
pub struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            err: e.into(),
        }
    }

    /// Data and format problems; configuration errors from the core library
    /// count as usage errors.
    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<drfn_core::Error>() {
            Some(drfn_core::Error::Config(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure { code, err }
    }

    pub fn check(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CHECK,
            err: e.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let threads = if cli.deterministic { 1 } else { cli.threads };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    println!(
        "[global]\n  seed = {}\n  threads = {}\n  deterministic = {}\n  config = {}",
        cli.seed,
        rayon::current_num_threads(),
        cli.deterministic,
        cli.config.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into())
    );

    let result = match &cli.command {
        Command::Prepare(a) => commands::prepare(a, cli.seed),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Sr(a) => commands::sr(a),
        Command::Eval(a) => commands::eval(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
