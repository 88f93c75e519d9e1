use std::process::ExitCode;

use nldamp_cli::CliError;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    match nldamp_cli::run(&argv) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(e.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("nldamp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
