mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use crate::commands::CliError;

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = match args::Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("Usage", e.to_string().trim_end().to_owned(), 2),
    };
    match commands::run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => fail("Usage", msg, 2),
        Err(CliError::Data(e)) => fail(e.kind(), e.to_string(), 1),
    }
}
