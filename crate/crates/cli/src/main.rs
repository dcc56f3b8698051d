use std::process::ExitCode;

use clap::Parser;
use riskcost_cli::cli::{run, Cli};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    // Verbosity comes from RISKCOST_LOG (e.g. `info`, `riskcost_core=debug`).
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("RISKCOST_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
