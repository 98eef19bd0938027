//! `ldlab`: corpus generation, diffusion training, synthetic dataset
//! generation, detector training and evaluation from one binary.
//!
//! Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match commands::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::error_code(&e);
            eprintln!("ldlab: error[{code}]: {e:#}");
            ExitCode::from(if code == "usage" { 1 } else { 2 })
        }
    }
}
