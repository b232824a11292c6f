//! `terrapos` command-line driver.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
//! Diagnostics go to stderr; data goes to stdout or into `--out`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "terrapos", version = env!("TERRAPOS_BUILD_ID"), about = "Carrier-phase 5G positioning toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Scenario TOML; overrides --preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in scenario used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Umi)]
    pub preset: Preset,
    /// Seed for every random draw; defaults to the scenario's rng_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Without it, tables go to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Kv)]
    pub format: Format,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Human-readable progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 30 kHz, 3276 subcarriers.
    Umi,
    /// 120 kHz, 816 subcarriers.
    UmiCompact,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Kv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// LOS coverage grid over an obstacle map.
    Coverage(commands::CoverageArgs),
    /// Simulate received frames for every TRP link, or a full sensor drive.
    Simulate(commands::SimulateArgs),
    /// Carrier-phase ranging of the scenario UE against each TRP.
    Range(commands::RangeArgs),
    /// Generate a labeled dataset and train the LOS/NLOS classifier.
    Train(commands::TrainArgs),
    /// Score frames or a dataset with a trained classifier.
    Classify(commands::ClassifyArgs),
    /// Simulate epochs and multilaterate with NLOS screening.
    Localize(commands::LocalizeArgs),
    /// Run the error-state filter over IMU and position-measurement files.
    Fuse(commands::FuseArgs),
    /// ATE/RPE of an estimated trajectory against ground truth.
    Evaluate(commands::EvaluateArgs),
    /// Run a scripted study and write its outputs with a manifest.
    Study(commands::StudyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.global.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
