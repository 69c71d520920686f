use std::io::{self, Write};
use std::process::ExitCode;

use dismultihate::cli;

fn main() -> ExitCode {
    let mut out = io::stdout().lock();
    let result = cli::run(std::env::args_os(), &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
