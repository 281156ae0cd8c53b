//! Command-line front end: every subcommand reads a flat TOML config, lets
//! flags override it, runs one pipeline and writes JSON/CSV artifacts plus
//! `manifest.json` into the output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::Settings;

#[derive(Parser, Debug)]
#[command(name = "evprice", version, about = "EV charging prices on coupled power-transportation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML file with any of the settings below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve the user equilibrium and certify it.
    UeSolve,
    /// Gradient of the charging flows with respect to the owned prices.
    Sensitivity,
    /// Profit-maximizing prices by sensitivity-driven gradient ascent.
    PriceOptimize,
    /// Alternate optimal power flow and price optimization to a fixed point.
    CoupledRun,
    /// Enumerate a price grid and report the best point and the landscape.
    OracleGrid,
    /// Compare the analytic gradient with central differences.
    FdCheck,
    /// Profit, power loss and transport cost of the standard strategies.
    ImpactReport,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::UeSolve => "ue-solve",
            Command::Sensitivity => "sensitivity",
            Command::PriceOptimize => "price-optimize",
            Command::CoupledRun => "coupled-run",
            Command::OracleGrid => "oracle-grid",
            Command::FdCheck => "fd-check",
            Command::ImpactReport => "impact-report",
        }
    }
}

/// Exit code 2 for bad input, 3 for numerical failure.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<evprice::Error> for Failure {
    fn from(e: evprice::Error) -> Self {
        let msg = match &e {
            evprice::Error::CoupledCycleCap { last_prices, last_lmps, .. } => {
                format!("{e}; last prices {last_prices:?}, last LMPs {last_lmps:?}")
            }
            _ => e.to_string(),
        };
        if e.is_numerical() {
            Failure::Numerical(msg)
        } else {
            Failure::Validation(msg)
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    library_version: &'static str,
    config_file: Option<&'a PathBuf>,
    config: &'a Settings,
    threads: usize,
    started_unix: u64,
    wall_seconds: f64,
    artifacts: &'a [String],
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let settings = file.merged(cli.settings).resolved();
    let needs_power = matches!(cli.command, Command::CoupledRun | Command::ImpactReport);
    settings.validate(needs_power)?;
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Validation(format!("thread pool: {e}")))?;
    }
    let out = settings.output_dir.clone().expect("resolved");
    std::fs::create_dir_all(&out).map_err(|e| Failure::Validation(format!("{}: {e}", out.display())))?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let artifacts = commands::run(cli.command, &settings, &out)?;
    let manifest = Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        library_version: evprice::VERSION,
        config_file: cli.config.as_ref(),
        config: &settings,
        threads: rayon::current_num_threads(),
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        artifacts: &artifacts,
    };
    commands::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
