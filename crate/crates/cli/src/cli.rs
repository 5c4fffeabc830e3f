//! Command-line surface and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use crate::output::{write_run, RunMeta};
use crate::scenario::{parse_scenario, Preset, Scenario, ScenarioError};
use crate::tasks::{run_scenario, RunError, RunOutput};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "finsler-vortex", version, about = "Renormalized vortex energy on the Finsler torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the solver (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Replace the scenario's grid size.
        #[arg(long)]
        grid_override: Option<usize>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// List the built-in Finsler structures.
    Presets,
}

/// Reads a scenario and applies a grid override, re-validating afterwards.
pub fn load(path: &Path, grid_override: Option<usize>) -> anyhow::Result<Result<Scenario, ScenarioError>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_scenario(&bytes).and_then(|mut s| {
        if let Some(n) = grid_override {
            s.grid.n = n;
            s.validate()?;
        }
        Ok(s)
    }))
}

/// Runs a validated scenario on `threads` workers and writes it to `dir`.
pub fn run_to_dir(
    scenario: &Scenario,
    dir: &Path,
    threads: Option<usize>,
) -> anyhow::Result<Result<RunOutput, RunError>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    let start = Instant::now();
    info!("running {} on n = {}", scenario.task.name(), scenario.grid.n);
    let outcome = pool.install(|| run_scenario(scenario));
    let meta = RunMeta { wall_time_s: start.elapsed().as_secs_f64(), threads: pool.current_num_threads() };
    write_run(dir, scenario, &outcome, &meta).with_context(|| format!("writing {}", dir.display()))?;
    Ok(outcome)
}

fn presets() {
    for p in Preset::ALL {
        let params: Vec<String> = p.parameters().iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<17} {:<24} {}", p.name(), params.join(" "), p.description());
    }
}

pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Presets => {
            presets();
            EXIT_OK
        }
        Command::Validate { scenario } => match load(&scenario, None) {
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_IO
            }
            Ok(Err(e)) => {
                eprintln!("{e}");
                EXIT_INVALID
            }
            Ok(Ok(s)) => {
                println!("ok: {} task, n = {}, {} vortices", s.task.name(), s.grid.n, s.vortices.degrees.len());
                EXIT_OK
            }
        },
        Command::Run { scenario, out, threads, grid_override } => {
            let s = match load(&scenario, grid_override) {
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return EXIT_IO;
                }
                Ok(Err(e)) => {
                    eprintln!("{e}");
                    return EXIT_INVALID;
                }
                Ok(Ok(s)) => s,
            };
            let dir = out.unwrap_or_else(|| PathBuf::from(&s.output));
            match run_to_dir(&s, &dir, threads) {
                Err(e) => {
                    eprintln!("error: {e:#}");
                    EXIT_IO
                }
                Ok(Err(e)) => {
                    eprintln!("{e}");
                    EXIT_NUMERICAL
                }
                Ok(Ok(_)) => {
                    println!("wrote {}", dir.display());
                    EXIT_OK
                }
            }
        }
    }
}
