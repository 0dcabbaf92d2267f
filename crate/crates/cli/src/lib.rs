//! Command-line pipeline over the `neurodissect` library.
//!
//! Every subcommand writes TSV reports, a `summary.txt` and a `config.toml`
//! echo of its resolved settings into `--out`. Exit codes: 0 on success, 2
//! for bad input, 3 when a computation cannot be carried out.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub mod args;
mod commands;
pub mod config;
mod report;

use args::{Cli, Command};
use config::FileConfig;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn compute(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_COMPUTE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<neurodissect::Error> for CliError {
    fn from(e: neurodissect::Error) -> Self {
        let code = if e.is_input_error() {
            EXIT_INPUT
        } else {
            EXIT_COMPUTE
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn init_threads(flag: Option<usize>, file: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("NEURODISSECT_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            CliError::input(format!("NEURODISSECT_THREADS must be a count, got `{v}`"))
        })?),
        Err(_) => None,
    };
    if let Some(n) = flag.or(env).or(file) {
        // Only the first pool in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::input(e.render().to_string())),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    init_threads(cli.threads, file.threads)?;
    match cli.command {
        Command::Synth(a) => commands::synth(a, &file),
        Command::Dissect(a) => commands::dissect(a, &file),
        Command::CoreConcepts(a) => commands::core_concepts(a, &file),
        Command::Explain(a) => commands::explain(a, &file),
        Command::Filter(a) => commands::filter(a, &file),
        Command::Ablate(a) => commands::ablate(a, &file),
        Command::RetrainPe(a) => commands::retrain_pe(a, &file),
    }
}
