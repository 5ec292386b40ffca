//! `deadleaves` command-line tool.
//!
//! Exit codes: 0 on success, 2 for usage errors and rejected parameters
//! (including the enumeration cap), 1 for computation and file failures.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command};

/// Malformed flag values or combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<deadleaves::Error>() {
        Some(deadleaves::Error::InvalidParameter(_) | deadleaves::Error::CapExceeded { .. }) => 2,
        _ => 1,
    }
}

fn echo(cli: &Cli, config_file: Option<&OsString>) -> anyhow::Result<Value> {
    Ok(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": config_file.map(|p| p.to_string_lossy().into_owned()),
        "command": serde_json::to_value(&cli.command)?,
    }))
}

fn config_path(raw: &[OsString]) -> Option<OsString> {
    let pos = raw.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="))?;
    match raw[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => Some(p.into()),
        None => raw.get(pos + 1).cloned(),
    }
}

fn run(cli: &Cli, config: &Value) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    match &cli.command {
        Command::Generate(a) => commands::generate(a, config),
        Command::Prior(a) => commands::prior(a, config),
        Command::Likelihood(a) => commands::likelihood(a, config),
        Command::Observe(a) => commands::observe(a, config),
        Command::Oracle(a) => commands::oracle(a, config),
        Command::Partitions(a) => commands::partitions(a, config),
    }
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let file = config_path(&raw);
    let args = match config::expand(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = echo(&cli, file.as_ref()).and_then(|config| run(&cli, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
