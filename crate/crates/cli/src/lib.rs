//! Command-line driver: data generation, training, evaluation, sweeps,
//! gradient checks and plots.
//!
//! Exit codes: 0 success, 1 failed sweep runs, 2 usage or config, 3 numerical
//! failure, 4 I/O.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod settings;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Plot(a) => commands::plot(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
