//! `fracpme`: run, diagnose and verify the fractional porous medium simulator.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical or verification failure.
//! Failures print `{"kind": ..., "message": ...}` on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracpme_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fracpme", version, about = "Nonlocal porous medium flow with fractional potential pressure")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single worker thread; outputs are bit-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset; exclusive with `--config`.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Output directory (overrides `outputs.directory`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the randomized checks (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the configured datum and write diagnostics, snapshots and plots.
    Run(Common),
    /// Recompute diagnostics from stored snapshots.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Snapshot file or directory of snapshots.
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Compare stored snapshots against the configured barrier.
    BarrierCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Smallest barrier speed (or subsolution decay) that holds over the run.
    Calibrate(Common),
    /// Speed-scaling regression over levels, curvatures and orders.
    Sweep(Common),
    /// Spectral operators against free-space quadrature, and the half-ball bound.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Number of randomized half-ball configurations.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Render CSV columns, or a snapshot profile, to SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Diagnostics CSV (default: `<out>/diagnostics.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Columns to plot against `t` (default: all).
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        /// Snapshot whose profile is plotted along the first axis.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// A verification ran but did not hold.
    Check { kind: &'static str, message: String },
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_validation() => 1,
            Failure::Usage(_) => 1,
            _ => 2,
        }
    }

    fn json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Core(e) => (e.kind(), e.to_string()),
            Failure::Check { kind, message } => (*kind, message.clone()),
            Failure::Usage(m) => ("usage", m.clone()),
        };
        serde_json::json!({ "kind": kind, "message": message })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report(Failure::Usage(e.to_string().trim().to_string()));
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return report(Failure::Usage("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("{}", f.json());
    ExitCode::from(f.code())
}
