// SPDX-License-Identifier: Apache-2.0

mod args;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rareval_core::ErrorKind;
use serde_json::json;

use args::Cli;

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Input,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Internal,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Input => 2,
            ErrorKind::Infeasible => 3,
            ErrorKind::Internal => 4,
        }
    }
}

impl From<rareval_core::Error> for CliError {
    fn from(e: rareval_core::Error) -> Self {
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

/// Settings shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub reproducible: bool,
    pub out_dir: PathBuf,
    pub config: Option<serde_json::Value>,
}

impl Context {
    pub fn generated_at(&self) -> Option<String> {
        (!self.reproducible).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.kind {
                ErrorKind::Input => "input",
                ErrorKind::Infeasible => "infeasible",
                ErrorKind::Internal => "internal",
            };
            eprintln!("{}", json!({ "error": { "kind": kind, "message": e.message } }));
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => {
            let value = config::read_value(path)?;
            config::check_sections(&value)?;
            Some(value)
        }
        None => None,
    };
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os("RAREVAL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context {
        seed: cli.seed,
        reproducible: cli.reproducible,
        out_dir,
        config,
    };
    commands::dispatch(cli.command, &ctx)
}
