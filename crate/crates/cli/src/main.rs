use std::process::ExitCode;

use clap::Parser;
use kconvex_cli::commands::run;
use kconvex_cli::report::Status;
use kconvex_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Error.code())
        }
    }
}
