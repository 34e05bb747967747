use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match thumbqc::run(thumbqc::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("thumbqc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
