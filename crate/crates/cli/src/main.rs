use clap::{Parser, Subcommand};
use eosnet::harness::{self, HarnessError, ScenarioSpec};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_SCHEMA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulate, estimate, sweep and optimize networked passive-sensor scenarios.
#[derive(Debug, Parser)]
#[command(name = "eosnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces the run seed and the optimizer seed of the scenario.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write measurement and ground-truth tables.
    Simulate(Common),
    /// Run the group filter and write the report, estimate tables and event log.
    Estimate(Common),
    /// Run the degradation sweep of the `sweep` block.
    Sweep(Common),
    /// Run the configuration search of the `optimize` block.
    Optimize(Common),
}

fn run(cmd: &Command) -> Result<(Vec<PathBuf>, String), HarnessError> {
    let (Command::Simulate(c) | Command::Estimate(c) | Command::Sweep(c) | Command::Optimize(c)) = cmd;
    let mut spec = ScenarioSpec::load(&c.scenario)?;
    if let Some(seed) = c.seed_override {
        spec.override_seed(seed);
    }
    // block presence is part of the schema check
    match cmd {
        Command::Sweep(_) if spec.sweep.is_none() => return Err(HarnessError::MissingBlock("sweep")),
        Command::Optimize(_) if spec.optimize.is_none() => return Err(HarnessError::MissingBlock("optimize")),
        _ => {}
    }
    let (outputs, summary) = match cmd {
        Command::Simulate(_) => {
            let out = harness::simulate(&spec)?;
            (out, format!("simulated seed {}", spec.seed))
        }
        Command::Estimate(_) => {
            let (report, out) = harness::estimate(&spec)?;
            let summary = serde_json::to_string(&report.metrics)?;
            (out, summary)
        }
        Command::Sweep(_) => {
            let (table, out) = harness::sweep(&spec)?;
            (out, format!("{} sweep rows over {}", table.rows.len(), table.axis.name()))
        }
        Command::Optimize(_) => {
            let (report, out) = harness::optimize(&spec)?;
            (out, format!("best score {} after {} evaluations", report.best_score, report.evaluations))
        }
    };
    Ok((outputs.write_to(&c.out)?, summary))
}

fn quiet(cmd: &Command) -> bool {
    let (Command::Simulate(c) | Command::Estimate(c) | Command::Sweep(c) | Command::Optimize(c)) = cmd;
    c.quiet
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = quiet(&cli.command);
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "warn" }))
        .init();
    match run(&cli.command) {
        Ok((files, summary)) => {
            if !quiet {
                for f in &files {
                    println!("wrote {}", f.display());
                }
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_schema() { EXIT_SCHEMA } else { EXIT_RUNTIME })
        }
    }
}
