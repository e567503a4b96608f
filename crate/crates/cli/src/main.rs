use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use twrn_cli::args::Cli;
use twrn_cli::config::ExperimentConfig;
use twrn_cli::run::{self, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match go(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn go(cli: &Cli) -> Result<u8, CliError> {
    let base = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let cfg = cli.apply(base)?;
    let seed = run::env_seed(std::env::var("TWRN_SEED").ok())?;
    let outcome = run::run(&cfg, seed)?;
    match &cfg.out {
        Some(path) => {
            fs::write(path, &outcome.csv).map_err(|source| CliError::Write { path: path.clone(), source })?;
            print!("{}", outcome.summary);
        }
        None => {
            eprint!("{}", outcome.summary);
            let _ = std::io::stdout().write_all(outcome.csv.as_bytes());
        }
    }
    Ok(outcome.exit)
}
