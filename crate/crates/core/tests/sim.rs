//! Closed-loop runs with a small, quickly trained ensemble.

use oodmpc::conformal::{calibrate_with, nonconformity, CalibrationTarget, Detector, ScoreSet};
use oodmpc::data::{split_dataset, synth_generate, SynthParams, Trajectory};
use oodmpc::nn::{init_ensemble, train_ensemble, Ensemble, Predictor, TrainConfig};
use oodmpc::par::Execution;
use oodmpc::sim::{
    run_batch_with, run_trial, BatchPlan, ControllerMode, ScenarioConfig, TrialSpec,
};

fn setup() -> (Ensemble, Detector, Vec<Trajectory>) {
    let trajs = synth_generate(&SynthParams::default(), 16, 11).unwrap();
    let split = split_dataset(&trajs, 2, 11).unwrap();
    let init = init_ensemble(3, &[1, 2, 3]).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (ens, _) = train_ensemble(&init, &split.train_pairs, &cfg).unwrap();
    let scores: Vec<f64> = split
        .calibration_pairs
        .iter()
        .map(|p| nonconformity(&ens.predict(&p.window)).unwrap())
        .collect();
    let n = scores.len();
    let det = calibrate_with(&ScoreSet::new(scores).unwrap(), CalibrationTarget::Index(n), None).unwrap();
    (ens, det, split.test_trajectories)
}

#[test]
fn trials_are_deterministic_and_logged_every_step() {
    let (ens, det, sources) = setup();
    let cfg = ScenarioConfig::default();
    let spec = TrialSpec {
        mode: ControllerMode::EnsemblesOnly,
        fraud: false,
        seed: 42,
    };
    let a = run_trial(&cfg, &spec, &sources[0], &ens, &det).unwrap();
    let b = run_trial(&cfg, &spec, &sources[0], &ens, &det).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.vehicle.len(), cfg.steps + 1);
    assert_eq!(a.evaluations().count(), 27);
    assert!(a.min_distance.is_finite());
}

#[test]
fn batch_scheduling_does_not_change_results() {
    let (ens, det, sources) = setup();
    let cfg = ScenarioConfig::default();
    let plan = BatchPlan {
        modes: vec![ControllerMode::EnsemblesOnly],
        nominal_trials: 2,
        fraud_trials: 0,
        seed: 5,
    };
    let seq = run_batch_with(&cfg, &plan, &sources, &ens, &det, Execution::Sequential).unwrap();
    let par = run_batch_with(&cfg, &plan, &sources, &ens, &det, Execution::Parallel).unwrap();
    assert_eq!(seq.records, par.records);
    assert_eq!(seq.report, par.report);
    let m = seq.report.mode(ControllerMode::EnsemblesOnly).unwrap();
    assert_eq!(m.nominal.total(), 2);
}

#[test]
fn empty_batch_reports_no_rates() {
    let (ens, det, sources) = setup();
    let plan = BatchPlan {
        modes: vec![ControllerMode::Soda],
        nominal_trials: 0,
        fraud_trials: 0,
        seed: 0,
    };
    let out = run_batch_with(&ScenarioConfig::default(), &plan, &sources, &ens, &det, Execution::Sequential).unwrap();
    assert!(out.records.is_empty());
    let m = out.report.mode(ControllerMode::Soda).unwrap();
    assert_eq!(m.false_positive_rate, None);
    assert_eq!(m.true_positive_rate, None);
}
