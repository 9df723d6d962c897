use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pa_quit::config::RunConfig;
use pa_quit::run::{run, Command, Overrides};
use pa_quit::Error;

#[derive(Parser)]
#[command(name = "pa-quit", version, about = "Principal-agent contracts with quitting agents")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `simulation.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Halve Δt, Δx and Δs this many times.
    #[arg(long, global = true, default_value_t = 0)]
    refine: u32,
    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check the market environment against the standing assumptions.
    Validate,
    /// Solve the no-quit value on the half-line for every type.
    SolveU0,
    /// Iterate the quit recursion to its fixed point.
    Solve,
    /// Simulate contract chains under the fixed-point policy.
    Simulate,
    /// Compare simulated first-quit values with the solved surfaces.
    DppCheck,
    /// Generate the two-type market drop example and check the quit gain.
    ExampleQuitGain {
        /// Size of the drop in the weaker type's outside option.
        #[arg(long)]
        market_drop: Option<f64>,
        /// Payment cap C₀.
        #[arg(long)]
        payment_cap: Option<f64>,
    },
    /// Solve, simulate and check, with a plain-text summary.
    Report,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Config(_) | Error::Io(_) => 2,
        Error::Blocked(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut ov = Overrides { out: cli.out, seed: cli.seed, refine: cli.refine, workers: cli.workers, ..Default::default() };
    let command = match cli.command {
        Cmd::Validate => Command::Validate,
        Cmd::SolveU0 => Command::SolveU0,
        Cmd::Solve => Command::Solve,
        Cmd::Simulate => Command::Simulate,
        Cmd::DppCheck => Command::DppCheck,
        Cmd::ExampleQuitGain { market_drop, payment_cap } => {
            ov.market_drop = market_drop;
            ov.payment_cap = payment_cap;
            Command::ExampleQuitGain
        }
        Cmd::Report => Command::Report,
    };
    let result = cli
        .config
        .ok_or_else(|| Error::Config("--config is required".into()))
        .and_then(|path| RunConfig::from_path(&path))
        .and_then(|cfg| run(cfg, command, &ov));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            let mut diag = serde_json::json!({ "error": e.to_string(), "command": command.name() });
            if let Error::Blocked(report) = &e {
                diag["violations"] = serde_json::to_value(&report.violations).unwrap_or_default();
            }
            eprintln!("{}", serde_json::to_string_pretty(&diag).unwrap_or_default());
            ExitCode::from(exit_code(&e))
        }
    }
}
