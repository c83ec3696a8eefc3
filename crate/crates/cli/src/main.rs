//! `acclick`: simulate, train, evaluate and compare click models.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use acclick::config::RunConfig;
use acclick::eval::EvalFilter;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "acclick",
    version,
    about = "CTR training with unbiased accidental-click filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Derives every component seed from this value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to the config's `out_dir`, then `run`.
    #[arg(long, env = "ACCLICK_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainingFlags {
    /// AC dwell threshold in seconds.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Skip down-sampling factor R (skips kept with probability 1/R).
    #[arg(long)]
    pub downsample: Option<f64>,
    /// Events per training period for the AC-then-click blocks.
    #[arg(long)]
    pub period: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a world and write it with a training and a holdout event log.
    Simulate(commands::SimulateArgs),
    /// Train the AC model and/or click models on an event log.
    Train(commands::TrainArgs),
    /// Score an event log with one or more models.
    Evaluate(commands::EvaluateArgs),
    /// Dwell-time PMFs and AC shares of an event log.
    Dwell(commands::DwellArgs),
    /// Unbiased-vs-agnostic LogLoss lift over a grid of AC thresholds.
    Sweep(commands::SweepArgs),
    /// Replay auctions in a world with competing models.
    ServeSim(commands::ServeSimArgs),
    /// Simulate, train every mode, evaluate and replay auctions.
    Experiment(commands::ExperimentArgs),
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.reseed(s);
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("run"))
    }
}

impl TrainingFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.tau {
            cfg.training.tau_ac_s = t;
        }
        if let Some(r) = self.downsample {
            cfg.training.downsample_r = r;
        }
        if self.period.is_some() {
            cfg.training.period = self.period;
        }
    }
}

pub fn apply_filter(cfg: &mut RunConfig, filter: &Option<String>) -> Result<()> {
    if let Some(f) = filter {
        cfg.eval.filter = f
            .parse::<EvalFilter>()
            .with_context(|| format!("parsing filter {f:?}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Dwell(a) => commands::dwell(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::ServeSim(a) => commands::serve_sim(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
