mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, ConfigFile};

/// Failure of a subcommand. Usage errors exit with 2, domain errors with 1.
#[derive(Debug)]
pub struct CliError {
    pub usage: bool,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { usage: true, kind: "usage", message: message.into() }
    }

    pub fn domain(kind: &'static str, err: impl std::fmt::Display) -> Self {
        Self { usage: false, kind, message: err.to_string() }
    }
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
        Err(e) => {
            eprintln!("error: {}", e.message);
            let structured = serde_json::json!({"error": {"kind": e.kind, "message": e.message}});
            eprintln!("{structured}");
            ExitCode::from(if e.usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let jobs = cli.jobs.or(config.jobs).unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be positive"));
    }
    match cli.command {
        Command::Generate(mut a) => {
            a.merge(config.generate);
            commands::generate(a, jobs)
        }
        Command::Filter(mut a) => {
            a.merge(config.filter);
            commands::filter(a, jobs)
        }
        Command::Format(mut a) => {
            a.merge(config.format);
            commands::format(a)
        }
        Command::Evaluate(mut a) => {
            a.merge(config.evaluate);
            commands::evaluate(a, jobs)
        }
        Command::Stats(mut a) => {
            a.merge(config.stats);
            commands::stats(a)
        }
        Command::Correlate(mut a) => {
            a.merge(config.correlate);
            commands::correlate(a)
        }
        Command::ScorerCheck(mut a) => {
            a.merge(config.scorer_check);
            commands::scorer_check(a)
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get().min(8))
}
