//! `oodmpc`: data synthesis, ensemble training, conformal calibration,
//! closed-loop simulation and coverage statistics from one JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{validate_config, RunConfig};
use oodmpc::sim::ControllerMode;

#[derive(Parser, Debug)]
#[command(name = "oodmpc", version, about = "OOD-adaptive MPC toolkit")]
pub struct Cli {
    /// Run config (JSON), or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Generate synthetic crossing trajectories.
    Synth,
    /// Split the data, train the ensemble and score the calibration pairs.
    Train,
    /// Calibrate the OOD threshold from calibration scores.
    Calibrate,
    /// Run one closed-loop trial.
    Simulate(SimulateArgs),
    /// Run a batch of trials and build the detector confusion matrix.
    Batch(BatchArgs),
    /// Monte Carlo coverage of freshly calibrated thresholds.
    Coverage(CoverageArgs),
    /// Probability that empirical coverage lands in [x1, x2].
    BetaProb(BetaArgs),
    /// Smallest calibration size meeting a coverage probability target.
    PlanCalibration(PlanArgs),
    /// Score Gaussian-mixture predictions and flag trajectories.
    GmmDetect,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ControllerMode>,
    #[arg(long)]
    pub fraud: Option<bool>,
    #[arg(long)]
    pub trial_seed: Option<u64>,
    #[arg(long)]
    pub source: Option<usize>,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct BatchArgs {
    #[arg(long)]
    pub nominal: Option<usize>,
    #[arg(long)]
    pub fraud: Option<usize>,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct CoverageArgs {
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct BetaArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub x1: Option<f64>,
    #[arg(long)]
    pub x2: Option<f64>,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct PlanArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub x1: Option<f64>,
    #[arg(long)]
    pub x2: Option<f64>,
    #[arg(long)]
    pub precision: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    ControllerMode::ALL
        .into_iter()
        .find(|m| m.name() == s.replace('-', "_"))
        .ok_or_else(|| format!("unknown mode `{s}` (soda, ensembles_only, reachable_only)"))
}

/// Applies command-line overrides on top of the file config.
fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.paths.output_dir = o.clone();
    }
    match &cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            s.mode = a.mode.unwrap_or(s.mode);
            s.fraud = a.fraud.unwrap_or(s.fraud);
            s.trial_seed = a.trial_seed.unwrap_or(s.trial_seed);
            s.source = a.source.unwrap_or(s.source);
        }
        Command::Batch(a) => {
            cfg.batch.nominal_trials = a.nominal.unwrap_or(cfg.batch.nominal_trials);
            cfg.batch.fraud_trials = a.fraud.unwrap_or(cfg.batch.fraud_trials);
        }
        Command::Coverage(a) => cfg.coverage.trials = a.trials.unwrap_or(cfg.coverage.trials),
        Command::BetaProb(a) => {
            let b = &mut cfg.beta;
            b.n = a.n.unwrap_or(b.n);
            b.delta = a.delta.unwrap_or(b.delta);
            b.x1 = a.x1.unwrap_or(b.x1);
            b.x2 = a.x2.unwrap_or(b.x2);
        }
        Command::PlanCalibration(a) => {
            let b = &mut cfg.beta;
            b.delta = a.delta.unwrap_or(b.delta);
            b.p_target = a.p.unwrap_or(b.p_target);
            b.x1 = a.x1.unwrap_or(b.x1);
            b.x2 = a.x2.unwrap_or(b.x2);
            b.precision = a.precision.unwrap_or(b.precision);
        }
        _ => {}
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let violations = validate_config(&cfg, &cli.command);
    if !violations.is_empty() {
        eprintln!("error: invalid config");
        for v in &violations {
            eprintln!("  {v}");
        }
        return ExitCode::from(2);
    }
    if let Some(t) = cfg.threads {
        oodmpc::par::set_thread_limit(t);
    }
    match commands::dispatch(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
