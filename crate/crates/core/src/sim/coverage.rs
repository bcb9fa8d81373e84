use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{nonconformity, round_up};
use crate::data::{make_pairs, synth_generate_with, SynthParams};
use crate::nn::Predictor;
use crate::par::{map_indexed, stream_rng, Execution};
use crate::{Error, Result, WINDOW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub trials: usize,
    /// Calibration trajectories per trial (one random pair each).
    pub calibration_size: usize,
    /// 1-based order statistic used as the threshold.
    pub k: usize,
    pub eval_trajectories: usize,
    pub seed: u64,
    /// Round the threshold up at this many decimals; `None` keeps the exact
    /// order statistic, which is what the Beta law describes.
    pub round_decimals: Option<u32>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            trials: 300,
            calibration_size: 100,
            k: 97,
            eval_trajectories: 150,
            seed: 0,
            round_decimals: None,
        }
    }
}

impl CoverageConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.calibration_size == 0 {
            v.push("coverage.calibration_size: must be > 0".into());
        }
        if self.k == 0 || self.k > self.calibration_size {
            v.push("coverage.k: must be in 1..=calibration_size".into());
        }
        if self.eval_trajectories == 0 {
            v.push("coverage.eval_trajectories: must be > 0".into());
        }
        v
    }
}

pub fn coverage_experiment<P: Predictor + ?Sized>(
    params: &SynthParams,
    predictor: &P,
    cfg: &CoverageConfig,
) -> Result<Vec<f64>> {
    coverage_experiment_with(params, predictor, cfg, Execution::default())
}

/// Empirical coverage of a freshly calibrated threshold, once per trial.
///
/// Each trial draws a new calibration set and a new evaluation set from the
/// generator; the predictor is never retrained. Trials run in parallel
/// under `exec` and depend only on `(cfg.seed, trial)`.
pub fn coverage_experiment_with<P: Predictor + ?Sized>(
    params: &SynthParams,
    predictor: &P,
    cfg: &CoverageConfig,
    exec: Execution,
) -> Result<Vec<f64>> {
    if let Some(msg) = cfg.violations().first() {
        return Err(Error::arg(msg.clone()));
    }
    params.validate()?;
    if params.length <= WINDOW {
        return Err(Error::arg(format!("synth.length must exceed the {WINDOW}-step window")));
    }
    map_indexed(cfg.trials, exec, |t| one_trial(params, predictor, cfg, t as u64))
        .into_iter()
        .collect()
}

fn score(predictor: &(impl Predictor + ?Sized), window: &[crate::Point]) -> Result<f64> {
    nonconformity(&predictor.predict(window))
}

fn one_trial<P: Predictor + ?Sized>(params: &SynthParams, predictor: &P, cfg: &CoverageConfig, t: u64) -> Result<f64> {
    // Each trial owns three generator streams: calibration, pair choice and
    // evaluation.
    let base = cfg.seed.wrapping_add(t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let cal = synth_generate_with(params, cfg.calibration_size, base, Execution::Sequential)?;
    let mut pick = stream_rng(base, 1 << 40);
    let mut scores = Vec::with_capacity(cal.len());
    for traj in &cal {
        let pairs = make_pairs(traj, WINDOW);
        let pair = &pairs[pick.random_range(0..pairs.len())];
        scores.push(score(predictor, &pair.window)?);
    }
    scores.sort_by(f64::total_cmp);
    let mut threshold = scores[cfg.k - 1];
    if let Some(d) = cfg.round_decimals {
        threshold = round_up(threshold, d);
    }

    let eval = synth_generate_with(params, cfg.eval_trajectories, base ^ 0x5555_5555_5555_5555, Execution::Sequential)?;
    let (mut covered, mut total) = (0usize, 0usize);
    for traj in &eval {
        for pair in make_pairs(traj, WINDOW) {
            if score(predictor, &pair.window)? <= threshold {
                covered += 1;
            }
            total += 1;
        }
    }
    Ok(covered as f64 / total as f64)
}

/// One `trial,coverage` row per sample.
pub fn write_coverage_csv<W: Write>(writer: W, samples: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["trial", "coverage"]).map_err(err)?;
    for (i, c) in samples.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
