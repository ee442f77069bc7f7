//! `hsl-sim`: drive simulator experiments from sectioned key=value docs.
//!
//! The subcommand must match the `command` declared in the document; the
//! output directory and master seed can be overridden without editing it.
//! Exit status: 0 on success, 1 when the run completes but reports failure
//! (training divergence, failed verification claims), 2 on usage, parse,
//! or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsl_core::config::{parse_config, Command as SpecCommand};
use hsl_core::runner::{execute, RunManifest, RunStatus};

#[derive(Parser)]
#[command(
    name = "hsl-sim",
    version,
    about = "Simulator and analysis toolkit for hubs-and-spokes collaborative learning"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment document
    #[arg(long)]
    config: PathBuf,
    /// Override the document's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the document's master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Train a fleet and emit per-round metrics
    Run(CommonArgs),
    /// Monte Carlo spectral gaps over a topology grid
    Spectral(CommonArgs),
    /// Closed-form contraction factors and edge budgets
    Bounds(CommonArgs),
    /// Monte Carlo checks of the per-stage mixing claims
    Verify(CommonArgs),
}

impl CliCommand {
    fn split(&self) -> (&CommonArgs, SpecCommand) {
        match self {
            CliCommand::Run(a) => (a, SpecCommand::Run),
            CliCommand::Spectral(a) => (a, SpecCommand::Spectral),
            CliCommand::Bounds(a) => (a, SpecCommand::Bounds),
            CliCommand::Verify(a) => (a, SpecCommand::Verify),
        }
    }
}

fn run(args: &CommonArgs, expected: SpecCommand) -> Result<RunManifest, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut spec = parse_config(&text).map_err(|e| e.to_string())?;
    if spec.command != expected {
        return Err(format!(
            "document declares command = {}, but the {} subcommand was invoked",
            spec.command.as_str(),
            expected.as_str()
        ));
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    execute(&spec).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, expected) = cli.command.split();
    match run(args, expected) {
        Ok(manifest) => {
            for (name, _) in &manifest.files {
                println!("wrote {}", manifest.output_dir.join(name).display());
            }
            println!("wrote {}", manifest.output_dir.join("manifest.txt").display());
            match manifest.status {
                RunStatus::Ok => {
                    println!("status: ok");
                    ExitCode::SUCCESS
                }
                RunStatus::Diverged { round } => {
                    eprintln!("status: diverged at round {round}");
                    ExitCode::from(1)
                }
                RunStatus::ClaimsFailed { failed } => {
                    eprintln!("status: {failed} verification claims failed");
                    ExitCode::from(1)
                }
            }
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
