use std::process::ExitCode;

use clap::Parser;
use rngscan::args::Cli;
use rngscan::ExitStatus;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match rngscan::run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("rngscan: {e:#}");
            ExitCode::from(ExitStatus::Error as u8)
        }
    }
}
