use std::io;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use mlagru::cli::{self, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let filter = EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .with_current_span(false)
        .init();
    let mut stdout = io::stdout().lock();
    std::process::exit(cli::report(cli::run(cli, &mut stdout)));
}
