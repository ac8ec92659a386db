use std::process::ExitCode;

use clap::{Parser, Subcommand};
use formlab::Error;

mod commands;
mod config;

use config::Settings;

/// Integer values of systems of forms: counting, volumes, discrepancy and
/// simultaneous approximation experiments.
#[derive(Parser)]
#[command(name = "formlab", version)]
struct Cli {
    /// TOML or JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate a normal form.
    NormalForm(Settings),
    /// Sample random instances of a spec.
    Sample(Settings),
    /// Count integer vectors with values in a box.
    Count(Settings),
    /// Volume of the region counted by `count`.
    Volume(Settings),
    /// The main-term constant c_{F,M}.
    Constant(Settings),
    /// Residuals of the count against the main term over a radius grid.
    Sweep(Settings),
    /// Lattice-point discrepancy over sampled lattices.
    Discrepancy(Settings),
    /// Sup-min density table over growing target windows.
    Uniform(Settings),
    /// Solve one simultaneous approximation query.
    Solve(Settings),
    /// Run the experiment named by the `experiment` key of --config.
    Run(Settings),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_validation() => 2,
        Error::Json(_) => 2,
        Error::BudgetExceeded { .. } | Error::RejectionBudgetExceeded { .. } => 3,
        Error::Io(_) => 4,
        Error::Csv(e) if e.is_io_error() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> formlab::Result<()> {
    let (name, flags) = match cli.command {
        Command::NormalForm(s) => ("normal-form", s),
        Command::Sample(s) => ("sample", s),
        Command::Count(s) => ("count", s),
        Command::Volume(s) => ("volume", s),
        Command::Constant(s) => ("constant", s),
        Command::Sweep(s) => ("sweep", s),
        Command::Discrepancy(s) => ("discrepancy", s),
        Command::Uniform(s) => ("uniform", s),
        Command::Solve(s) => ("solve", s),
        Command::Run(s) => ("run", s),
    };
    let settings = match &cli.config {
        Some(path) => flags.over(Settings::load(path)?),
        None => flags,
    };
    let name = if name == "run" {
        settings
            .experiment
            .clone()
            .ok_or_else(|| Error::InvalidArgument("`run` needs an `experiment` key in --config".into()))?
    } else {
        name.to_string()
    };
    if let Some(threads) = settings.threads {
        if threads == 0 {
            return Err(Error::InvalidArgument("--threads must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    commands::dispatch(&name, &settings)
}
