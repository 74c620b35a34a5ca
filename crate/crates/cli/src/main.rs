use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pflab::report::Invariant;
use pflab::suite::Fault;
use pflab::{output, Completed, RunError, SCHEMA};

#[derive(Parser)]
#[command(name = "pflab", version, about = "Finite-truncation laboratory for Pauli-Fierz models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task described by a JSON configuration.
    Run { config: PathBuf },
    /// Check every exact identity on a built-in instance.
    CheckAll {
        #[arg(long, default_value = "default", value_parser = ["small", "default"])]
        instance: String,
        /// Corrupt one quantity to confirm the suite reports failures.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Print the JSON schema of configurations, records and tables.
    Schema,
    /// Print the program and artifact versions.
    Version,
}

fn line(i: &Invariant) -> String {
    let status = match (i.asserted, i.pass) {
        (true, true) => "PASS",
        (true, false) => "FAIL",
        (false, _) => "INFO",
    };
    let note = i.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default();
    format!("{status} {:<34} {:>12.3e} <= {:.1e}{note}", i.name, i.value, i.tolerance)
}

fn finish(res: Result<Completed, RunError>) -> ExitCode {
    match res {
        Ok(done) => {
            for i in &done.output.invariants {
                println!("{}", line(i));
            }
            println!("outputs: {}", done.dir.display());
            let failing = done.output.failing();
            if failing.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failing invariants: {}", failing.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => finish(pflab::run_config(&config)),
        Command::CheckAll { instance, inject_fault } => finish(pflab::run_check_all(&instance, inject_fault)),
        Command::Schema => {
            print!("{SCHEMA}");
            ExitCode::SUCCESS
        }
        Command::Version => {
            println!("pflab {} (artifact version {})", env!("CARGO_PKG_VERSION"), output::ARTIFACT_VERSION);
            ExitCode::SUCCESS
        }
    }
}
