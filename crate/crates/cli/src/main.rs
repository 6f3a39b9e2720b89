mod args;
mod commands;
mod manifest;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, VerifyCommand};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Verify(VerifyCommand::Decrease(a)) => commands::verify_decrease(a),
        Command::Verify(VerifyCommand::Roa(a)) => commands::verify_roa(a),
        Command::Verify(VerifyCommand::Hinf(a)) => commands::verify_hinf(a),
        Command::Verify(VerifyCommand::Invopt(a)) => commands::verify_invopt(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::ExportPlot(a) => commands::export_plot(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
