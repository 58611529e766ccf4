use std::io::Write as _;
use std::process::ExitCode;

use clap::Parser as _;
use lln_energy_cli::{run, Cli, EXIT_CONFIG};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let status = match run(&cli, &mut out) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    };
    let _ = out.flush();
    ExitCode::from(status)
}
