//! Experiment harness for Kac-flow generative modeling.
//!
//! ```text
//! kacflow <simulate|train|sample|distill|verify|sweep> [--config FILE] [--jobs N] [--seed S] [--out DIR]
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use output::{RunDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "kacflow", version, about = "Finite-speed Kac-flow experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `section.key = value` config file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Master seed, overriding `seed.master`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample Kac paths and record their states and jump counts.
    Simulate(Common),
    /// Fit the MLP velocity field by conditional regression.
    Train(Common),
    /// Integrate the reverse ODE from t = 1 to t = 0.
    Sample(Common),
    /// Endpoint distillation, possibly in stages.
    Distill(Common),
    /// Run a verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite name, overriding `verify.suite`.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Score a grid of (a, c, schedule) by W2 to the data.
    Sweep(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Train(c) | Command::Sample(c) | Command::Distill(c) | Command::Sweep(c) => c,
            Command::Verify { common, .. } => common,
        }
    }
}

/// Resolves the config for `cmd`: file, then command-line overrides.
pub fn resolve_config(cmd: &Command) -> Result<ExperimentConfig> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed.master_seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Command::Verify { suite: Some(s), .. } = cmd {
        cfg.suite = s.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    }
    Ok(cfg)
}

pub fn execute(cmd: &Command) -> Result<RunManifest> {
    let cfg = resolve_config(cmd)?;
    let run = || match cmd {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Sample(_) => commands::sample(&cfg),
        Command::Distill(_) => commands::distill(&cfg),
        Command::Verify { .. } => commands::verify(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
    };
    match cmd.common().jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Core(kacflow_core::Error::Internal(e.to_string())))?
            .install(run),
        None => run(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(m) => {
            eprintln!("{}: wrote {} artifacts", m.command, m.artifacts.len());
            0
        }
        Err(e) => {
            eprintln!("kacflow: {e}");
            e.exit_code()
        }
    }
}
