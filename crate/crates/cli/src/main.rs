use std::process::ExitCode;

use clap::Parser;
use contract_match_cli::commands::{execute, Cli};
use contract_match_cli::files::{to_json, write_json};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((report, code)) => {
            match &cli.report_out {
                Some(path) => {
                    if let Err(e) = write_json(path, &report) {
                        eprintln!("error: {e}");
                        return ExitCode::from(e.exit_code() as u8);
                    }
                }
                None => print!("{}", to_json(&report)),
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
