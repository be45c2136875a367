mod commands;
mod error;
mod opts;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Parking-lot availability prediction with semi-Markov models.
#[derive(Debug, Parser)]
#[command(name = "lotstate", version, about)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the table of numeric defaults and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an event stream on a street grid.
    Simulate(commands::simulate::Args),
    /// Fit the duration models for both states.
    Fit(commands::fit::Args),
    /// Predict availability for lots at a given instant.
    Predict(commands::predict::Args),
    /// Run the rolling prediction experiment and write ROC curves.
    Evaluate(commands::evaluate::Args),
    /// Kaplan-Meier curves of the observed durations.
    Km(commands::km::Args),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    if cli.print_defaults {
        print!("{}", commands::defaults_table());
        return Ok(());
    }
    match cli.command {
        Some(Command::Simulate(a)) => commands::simulate::run(a),
        Some(Command::Fit(a)) => commands::fit::run(a),
        Some(Command::Predict(a)) => commands::predict::run(a),
        Some(Command::Evaluate(a)) => commands::evaluate::run(a),
        Some(Command::Km(a)) => commands::km::run(a),
        None => Err(CliError::Usage("no command given (see --help)".into())),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
