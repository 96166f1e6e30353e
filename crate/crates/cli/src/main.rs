//! `ivspline` command-line front end.

mod artifact;
mod commands;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ivspline",
    version,
    about = "Smoothing-spline instrumental-variable regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a curve to a CSV dataset.
    Fit(commands::FitArgs),
    /// Run a Monte Carlo study on a simulated design.
    Simulate(commands::SimulateArgs),
    /// Overlay curve CSVs in one SVG file.
    Plot(plot::PlotArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Plot(args) => plot::run(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
