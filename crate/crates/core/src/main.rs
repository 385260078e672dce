use std::process::ExitCode;

use clap::Parser;

use apx::cli_io::{run, Cli, EXIT_CONFIG};

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("APX_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                apx::exec::init_thread_pool(n);
            }
            _ => {
                eprintln!("{{\"error\":\"config\",\"exit_code\":{EXIT_CONFIG},\"message\":\"APX_THREADS must be a positive integer, got {v:?}\"}}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
