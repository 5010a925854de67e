use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use curvalloc_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).and_then(emit) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(o: curvalloc_cli::Outcome) -> Result<(), CliError> {
    match (&o.document, &o.out) {
        (Some(doc), Some(path)) => {
            std::fs::write(path, doc).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            println!("{}", o.summary);
        }
        (Some(doc), None) => {
            print!("{doc}");
            std::io::stdout().flush().ok();
            eprintln!("{}", o.summary);
        }
        (None, _) => println!("{}", o.summary),
    }
    Ok(())
}
