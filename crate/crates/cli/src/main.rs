//! `jointherm` — synthetic thermal telemetry, Gauss2 profile fits, network
//! training, prediction and evaluation from one binary.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{EvaluateArgs, FitGauss2Args, PredictArgs, SimulateArgs, TrainArgs, VerifyArgs};

#[derive(Parser)]
#[command(
    name = "jointherm",
    version,
    about = "Model-free thermal prediction for robot joint motors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic torque/temperature trajectories plus a manifest.
    Simulate(SimulateArgs),
    /// Fit the two-term Gaussian profile model to an (x, temperature) CSV.
    FitGauss2(FitGauss2Args),
    /// Train the LSTM + dense network on trajectory CSVs.
    Train(TrainArgs),
    /// Run a trained model over one trajectory and emit overlay artifacts.
    Predict(PredictArgs),
    /// Compute per-joint RMSE / MaxAE of a model on a set of trajectories.
    Evaluate(EvaluateArgs),
    /// Run the built-in verification suites (gradient check, normalization
    /// round trip, plant closed forms).
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::FitGauss2(args) => commands::fit_gauss2(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Verify(args) => commands::verify(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
