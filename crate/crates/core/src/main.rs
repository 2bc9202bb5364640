use std::process::ExitCode;

use clap::Parser;
use relabel_distill::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("rld: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
