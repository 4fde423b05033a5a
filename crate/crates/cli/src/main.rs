use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;
use stabscope::experiment::{run, Command, RunOptions};

/// Stabilization diagnostics for damped wave equations with confining
/// potentials.
#[derive(Debug, Parser)]
#[command(name = "stabscope", version)]
struct Cli {
    /// One of: flow, conditions, dsc-limit, quasimode, kinetic-sequence,
    /// tpc-witness, evolve, probe, resolvent, spectrum, suite.
    #[arg(value_parser = parse_command)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_command(s: &str) -> Result<Command, String> {
    s.parse().map_err(|e: stabscope::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STABSCOPE_LOG", "warn")).init();
    let cli = Cli::parse();
    let opts = RunOptions { threads: cli.threads, seed: cli.seed };
    match run(cli.command, &cli.config, &cli.out, &opts) {
        Ok(manifest) => {
            for a in &manifest.artifacts {
                println!("{}", cli.out.join(&a.path).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
