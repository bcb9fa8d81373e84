//! Shared fixture: an ensemble trained on synthetic crossings and a detector
//! calibrated on 100 held-out pairs.

#![allow(dead_code)]

pub mod toy;

use std::sync::OnceLock;

use oodmpc::conformal::{calibrate_with, nonconformity, CalibrationTarget, Detector, ScoreSet};
use oodmpc::data::{reflect_balance, split_dataset, synth_generate, SynthParams, Trajectory};
use oodmpc::nn::{init_ensemble, train_ensemble, Ensemble, Predictor, TrainConfig};

pub const SEED: u64 = 7;
pub const TRAIN_EPOCHS: usize = 40;

pub struct Fixture {
    pub ensemble: Ensemble,
    pub detector: Detector,
    pub calibration_scores: ScoreSet,
    pub test_trajectories: Vec<Trajectory>,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(build)
}

fn build() -> Fixture {
    // 20 held-out trajectories so each of 20 trials sees its own pedestrian;
    // the predictor is translation invariant, so a reused source repeats its
    // detector outcomes exactly.
    let trajs = reflect_balance(&synth_generate(&SynthParams::default(), 120, SEED).unwrap());
    let split = split_dataset(&trajs, 20, SEED).unwrap();
    assert_eq!(split.calibration_pairs.len(), 100);
    let seeds: Vec<u64> = (0..10).collect();
    let init = init_ensemble(10, &seeds).unwrap();
    let cfg = TrainConfig {
        epochs: TRAIN_EPOCHS,
        ..TrainConfig::default()
    };
    let (ensemble, _) = train_ensemble(&init, &split.train_pairs, &cfg).unwrap();
    let scores: Vec<f64> = split
        .calibration_pairs
        .iter()
        .map(|p| nonconformity(&ensemble.predict(&p.window)).unwrap())
        .collect();
    let calibration_scores = ScoreSet::new(scores).unwrap();
    // Synthetic scores are O(1e-5), far below the third-decimal rounding grain,
    // so the fixture keeps the exact order statistic.
    let detector = calibrate_with(&calibration_scores, CalibrationTarget::Delta(0.0396), None).unwrap();
    Fixture {
        ensemble,
        detector,
        calibration_scores,
        test_trajectories: split.test_trajectories,
    }
}
