use std::process::ExitCode;

use clap::Parser;

use censor_cli::{cmd_censor, cmd_simulate, cmd_verify, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Censor(args) => cmd_censor(args).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
            true
        }),
        Command::Simulate(args) => cmd_simulate(args).map(|s| {
            println!(
                "simulated {} paths: {} voluntary events, {} paths with disclosure",
                s.paths, s.voluntary_events, s.paths_with_disclosure
            );
            true
        }),
        Command::Verify(args) => cmd_verify(args).map(|r| {
            let verdict = if r.verdict.passed() { "PASS" } else { "FAIL" };
            println!("{} {verdict}", r.claim);
            r.verdict.passed()
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
