use std::io::ErrorKind;

use clap::Parser;

use aggdiff_cli::commands::{dispatch, Cli};
use aggdiff_cli::CliError;

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(CliError::Io(e) | CliError::Numerics(aggdiff::Error::Io(e))) if e.kind() == ErrorKind::BrokenPipe => {
            std::process::exit(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
