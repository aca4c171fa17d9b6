use std::process::ExitCode;

use clap::Parser;
use crpd_cli::{run, Cli, ErrorClass};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ErrorClass::Usage.exit_code()
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One line: class, then the human-readable message.
            eprintln!("error[{}]: {}", e.class.label(), e.message);
            ExitCode::from(e.class.exit_code())
        }
    }
}
