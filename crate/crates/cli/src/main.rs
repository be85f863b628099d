//! Command line front end. Exit codes: 0 success, 1 bad configuration,
//! 2 runtime failure, 3 the run itself failed to track (divergence or an
//! RMSE above the success threshold).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod plots;

use commands::Overrides;

#[derive(Debug)]
pub enum CliError {
    /// The request itself is wrong: bad config file, missing field,
    /// contradictory flags.
    Config(String),
    /// The request was fine but executing it failed: I/O, corrupt
    /// artifacts, numerics.
    Runtime(String),
    /// The closed loop ran and lost the reference.
    Tracking(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Tracking(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Tracking(m) => write!(f, "tracking failure: {m}"),
        }
    }
}

impl From<rctrack_core::error::Error> for CliError {
    fn from(e: rctrack_core::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "rctrack",
    version,
    about = "Reservoir-computing tracking control for a two-link arm",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Controller file to drive; overrides the config.
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Reference kind (circle, figure-eight, lorenz, mackey-glass) or a
    /// trajectory file path.
    #[arg(long)]
    trajectory: Option<String>,
    /// End-effector speed cap in m/s (0 disables).
    #[arg(long)]
    speed: Option<f64>,
    /// Additive torque disturbance level.
    #[arg(long)]
    sigma_d: Option<f64>,
    /// Multiplicative observation noise level.
    #[arg(long)]
    sigma_m: Option<f64>,
    /// Plant upper-arm length; sets a model/plant mismatch.
    #[arg(long)]
    l1: Option<f64>,
    /// Plant forearm length; sets a model/plant mismatch.
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an inverse-model controller from stochastic-torque episodes.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Plant upper-arm length override.
        #[arg(long)]
        l1: Option<f64>,
        /// Plant forearm length override.
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Run a trained controller on a reference trajectory.
    Track {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Grid sweep over noise levels or plant link lengths.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Sweep kind: noise or lengths; overrides the config.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Small end-to-end run: train a toy controller and track a circle.
    Demo {
        /// Output directory (default: rctrack-demo).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn overrides(common: &CommonArgs, run: Option<&RunArgs>) -> Overrides {
    let mut ov = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        ..Overrides::default()
    };
    if let Some(r) = run {
        ov.controller = r.controller.clone();
        ov.trajectory = r.trajectory.clone();
        ov.speed = r.speed;
        ov.sigma_d = r.sigma_d;
        ov.sigma_m = r.sigma_m;
        ov.l1 = r.l1;
        ov.l2 = r.l2;
    }
    ov
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train { common, l1, l2 } => {
            let mut ov = overrides(&common, None);
            ov.l1 = l1;
            ov.l2 = l2;
            commands::cmd_train(common.config, ov)
        }
        Command::Track { common, run } => {
            commands::cmd_track(common.config.clone(), overrides(&common, Some(&run)))
        }
        Command::Sweep { common, run, kind } => {
            commands::cmd_sweep(common.config.clone(), kind, overrides(&common, Some(&run)))
        }
        Command::Demo { out, seed } => commands::cmd_demo(out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
