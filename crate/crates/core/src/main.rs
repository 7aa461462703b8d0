use std::process::ExitCode;

use clap::Parser;
use hcs_contrast::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HCS_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code()),
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.status.code())
        }
    }
}
