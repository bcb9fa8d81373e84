use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{run_trial, ControllerMode, ScenarioConfig, SimOutcome, TrialRecord};
use crate::conformal::Detector;
use crate::data::Trajectory;
use crate::nn::Predictor;
use crate::par::{map_indexed, stream_rng, Execution};
use crate::{Error, Result};

/// What to run for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub mode: ControllerMode,
    pub fraud: bool,
    pub seed: u64,
}

/// Trial counts per mode. Trial `i` of every mode and behavior uses the same
/// source trajectory and seed, so modes are compared on identical scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchPlan {
    pub modes: Vec<ControllerMode>,
    pub nominal_trials: usize,
    pub fraud_trials: usize,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            modes: ControllerMode::ALL.to_vec(),
            nominal_trials: 10,
            fraud_trials: 10,
            seed: 0,
        }
    }
}

impl BatchPlan {
    /// Seed of trial `i`, shared by all modes and behaviors.
    pub fn trial_seed(&self, i: usize) -> u64 {
        stream_rng(self.seed, 1 << 32 | i as u64).next_u64()
    }

    /// Every trial as `(source index, spec)`, modes outermost, nominal
    /// before fraud.
    pub fn trials(&self, n_sources: usize) -> Vec<(usize, TrialSpec)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for (fraud, n) in [(false, self.nominal_trials), (true, self.fraud_trials)] {
                for i in 0..n {
                    let spec = TrialSpec {
                        mode,
                        fraud,
                        seed: self.trial_seed(i),
                    };
                    out.push((i % n_sources.max(1), spec));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub passed_safely: usize,
    pub stopped_safely: usize,
    pub collision: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: SimOutcome) {
        match o {
            SimOutcome::PassedSafely => self.passed_safely += 1,
            SimOutcome::StoppedSafely => self.stopped_safely += 1,
            SimOutcome::Collision => self.collision += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.passed_safely + self.stopped_safely + self.collision
    }
}

/// Per-evaluation detector outcomes. Every evaluation of a nominal trial is
/// ground-truth nominal; post-switch evaluations of a fraud trial are
/// ground-truth OOD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_positive: usize,
}

impl ConfusionMatrix {
    pub fn add_record(&mut self, r: &TrialRecord) {
        if r.fraud_switch.is_some() {
            for (_, e) in r.post_switch_evaluations() {
                if e.ood {
                    self.true_positive += 1;
                } else {
                    self.false_negative += 1;
                }
            }
        } else {
            for (_, e) in r.evaluations() {
                if e.ood {
                    self.false_positive += 1;
                } else {
                    self.true_negative += 1;
                }
            }
        }
    }

    pub fn nominal_total(&self) -> usize {
        self.true_negative + self.false_positive
    }

    pub fn ood_total(&self) -> usize {
        self.true_positive + self.false_negative
    }

    /// `None` when there were no nominal evaluations.
    pub fn false_positive_rate(&self) -> Option<f64> {
        let n = self.nominal_total();
        (n > 0).then(|| self.false_positive as f64 / n as f64)
    }

    pub fn true_positive_rate(&self) -> Option<f64> {
        let n = self.ood_total();
        (n > 0).then(|| self.true_positive as f64 / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mode: ControllerMode,
    pub fraud: bool,
    pub seed: u64,
    pub source_id: String,
    pub offset: f64,
    pub outcome: SimOutcome,
    pub min_distance: f64,
    pub evaluations: usize,
    pub flags: usize,
    /// 1-based post-switch evaluation index of the first flag.
    pub first_flag_after_switch: Option<usize>,
    pub fallbacks: usize,
    /// Largest dynamics defect and constraint violation over the verified
    /// plans of the trial.
    pub max_dynamics_defect: f64,
    pub max_constraint_violation: f64,
}

impl TrialSummary {
    pub fn from_record(r: &TrialRecord) -> Self {
        let checks = r.replans.iter().filter_map(|p| p.check);
        let (defect, violation) = checks.fold((0.0f64, 0.0f64), |(d, v), c| {
            (d.max(c.dynamics_defect), v.max(c.constraint_violation.max(c.limit_violation)))
        });
        TrialSummary {
            mode: r.mode,
            fraud: r.fraud_switch.is_some(),
            seed: r.seed,
            source_id: r.source_id.clone(),
            offset: r.offset,
            outcome: r.outcome,
            min_distance: r.min_distance,
            evaluations: r.evaluations().count(),
            flags: r.evaluations().filter(|(_, e)| e.ood).count(),
            first_flag_after_switch: r.first_flag_after_switch(),
            fallbacks: r.fallbacks(),
            max_dynamics_defect: defect,
            max_constraint_violation: violation,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Option<ControllerMode>,
    pub nominal: OutcomeCounts,
    pub fraud: OutcomeCounts,
    pub confusion: ConfusionMatrix,
    pub false_positive_rate: Option<f64>,
    pub true_positive_rate: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub seed: u64,
    pub detector_threshold: f64,
    pub modes: Vec<ModeSummary>,
    pub trials: Vec<TrialSummary>,
}

impl BatchReport {
    pub fn mode(&self, mode: ControllerMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == Some(mode))
    }

    /// Builds the report from finished records (any order). Every mode in
    /// `modes` gets a summary even without records; other modes follow in
    /// order of first appearance.
    pub fn from_records(seed: u64, detector: &Detector, modes: &[ControllerMode], records: &[TrialRecord]) -> Self {
        let mut modes: Vec<ModeSummary> = modes
            .iter()
            .map(|&m| ModeSummary {
                mode: Some(m),
                ..ModeSummary::default()
            })
            .collect();
        for r in records {
            let idx = match modes.iter().position(|m| m.mode == Some(r.mode)) {
                Some(i) => i,
                None => {
                    modes.push(ModeSummary {
                        mode: Some(r.mode),
                        ..ModeSummary::default()
                    });
                    modes.len() - 1
                }
            };
            let m = &mut modes[idx];
            if r.fraud_switch.is_some() {
                m.fraud.add(r.outcome);
            } else {
                m.nominal.add(r.outcome);
            }
            m.confusion.add_record(r);
            m.fallbacks += r.fallbacks();
        }
        for m in &mut modes {
            m.false_positive_rate = m.confusion.false_positive_rate();
            m.true_positive_rate = m.confusion.true_positive_rate();
        }
        BatchReport {
            seed,
            detector_threshold: detector.threshold,
            modes,
            trials: records.iter().map(TrialSummary::from_record).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput {
    pub report: BatchReport,
    pub records: Vec<TrialRecord>,
}

pub fn run_batch<P: Predictor + ?Sized>(
    cfg: &ScenarioConfig,
    plan: &BatchPlan,
    sources: &[Trajectory],
    predictor: &P,
    detector: &Detector,
) -> Result<BatchOutput> {
    run_batch_with(cfg, plan, sources, predictor, detector, Execution::default())
}

/// Runs every trial of `plan`, in parallel when `exec` allows. Records come
/// back in plan order regardless of scheduling.
pub fn run_batch_with<P: Predictor + ?Sized>(
    cfg: &ScenarioConfig,
    plan: &BatchPlan,
    sources: &[Trajectory],
    predictor: &P,
    detector: &Detector,
    exec: Execution,
) -> Result<BatchOutput> {
    let trials = plan.trials(sources.len());
    if !trials.is_empty() && sources.is_empty() {
        return Err(Error::arg("a batch needs at least one source trajectory"));
    }
    if let Some(msg) = cfg.violations().first() {
        return Err(Error::arg(msg.clone()));
    }
    let records = map_indexed(trials.len(), exec, |i| {
        let (src, spec) = &trials[i];
        run_trial(cfg, spec, &sources[*src], predictor, detector)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BatchOutput {
        report: BatchReport::from_records(plan.seed, detector, &plan.modes, &records),
        records,
    })
}
