use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmz::acceptance::{self, AcceptanceOptions};
use cmz::runner::{self, RunOptions};

#[derive(Parser)]
#[command(name = "cmz", version, about = "Tower and billiard experiments with checksummed artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one JSON-configured experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the config, then CMZ_WORKERS, then all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run an acceptance suite and print one line per criterion.
    Acceptance {
        #[arg(long, default_value = "full")]
        suite: String,
        #[arg(long)]
        workers: Option<usize>,
        /// Event budget; checks needing more are skipped. Defaults to CMZ_ACCEPT_EVENTS.
        #[arg(long)]
        budget: Option<u64>,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    ValidateConfig { path: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, workers } => {
            let result =
                runner::load_config(&config).and_then(|c| runner::run(&c, &RunOptions { out: Some(out), workers }));
            match result {
                Ok(m) => {
                    println!(
                        "{} finished in {:.1} s, {} files, final = {}",
                        m.kind,
                        m.wall_clock_seconds,
                        m.files.len(),
                        m.is_final
                    );
                    if m.is_final {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(3)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Acceptance { suite, workers, budget, report } => {
            let mut opts = AcceptanceOptions::from_env();
            if let Some(b) = budget {
                opts.budget_events = b;
            }
            opts.workers = runner::resolve_workers(workers, None);
            let rep = match acceptance::run_suite_with(&suite, &opts, |c| {
                eprintln!("  {} {} ({:.1} s)", c.status.label(), c.name, c.seconds)
            }) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            for line in rep.lines() {
                println!("{line}");
            }
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&rep).expect("report serializes");
                if let Err(e) = std::fs::write(&path, json) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if rep.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::ValidateConfig { path } => match runner::load_config(&path).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => {
                println!("ok: {}", c.experiment.kind());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
