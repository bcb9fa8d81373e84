//! Closed-loop pedestrian-crossing scenario.
//!
//! A car drives along the right lane toward a goal 70 m ahead while a
//! pedestrian replayed from a recorded (or synthetic) trajectory crosses the
//! road near the middle of the run. Every `replan_period` steps the controller
//! observes the pedestrian, scores the newest observation window with the
//! ensemble, and solves either the prediction-based MPC or the reachable-set
//! MPC for the remaining steps.

mod batch;
mod coverage;

pub use batch::{
    run_batch, run_batch_with, BatchOutput, BatchPlan, BatchReport, ConfusionMatrix, ModeSummary, OutcomeCounts,
    TrialSpec, TrialSummary,
};
pub use coverage::{coverage_experiment, coverage_experiment_with, write_coverage_csv, CoverageConfig};

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conformal::{nonconformity, Detector};
use crate::data::Trajectory;
use crate::nn::{rollout, Predictor};
use crate::par::stream_rng;
use crate::vehicle::{
    disc_sequence, solve_mpc_nominal, solve_mpc_reachable, step_dynamics, verify_plan, ControlInput, MpcProblem,
    MpcStatus, MpcWeights, PlanCheck, ReachableDisc, RoadGeometry, ScpConfig, VehicleLimits, VehicleState,
};
use crate::{dist, Error, Point, Result, SAMPLE_RATE_HZ, WINDOW};

/// Which MPC the controller may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Prediction-based MPC until the detector fires, reachable-set MPC while
    /// it does.
    Soda,
    EnsemblesOnly,
    ReachableOnly,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 3] = [
        ControllerMode::Soda,
        ControllerMode::EnsemblesOnly,
        ControllerMode::ReachableOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Soda => "soda",
            ControllerMode::EnsemblesOnly => "ensembles_only",
            ControllerMode::ReachableOnly => "reachable_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub steps: usize,
    pub rate_hz: f64,
    pub replan_period: usize,
    /// Seconds of nominal behavior before an adversarial pedestrian turns.
    pub fraud_switch_time: f64,
    pub pedestrian_v_max: f64,
    pub pedestrian_radius: f64,
    /// Pedestrian start x relative to the car, N(mean, std²).
    pub offset_mean: f64,
    pub offset_std: f64,
    pub vehicle_speed: f64,
    pub lane_center: f64,
    pub goal_distance: f64,
    pub limits: VehicleLimits,
    pub weights: MpcWeights,
    pub road: RoadGeometry,
    pub scp: ScpConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            steps: 150,
            rate_hz: SAMPLE_RATE_HZ,
            replan_period: 5,
            fraud_switch_time: 1.3,
            pedestrian_v_max: 4.5,
            pedestrian_radius: 0.5,
            offset_mean: 40.0,
            offset_std: 2.5,
            vehicle_speed: 10.0,
            lane_center: -1.8,
            goal_distance: 70.0,
            // Emergency braking: at 5 m/s² the car cannot stay clear of a
            // pedestrian charging from about 22 m even when flagged at once.
            limits: VehicleLimits {
                a_max: 8.0,
                ..VehicleLimits::default()
            },
            weights: MpcWeights::default(),
            road: RoadGeometry::default(),
            scp: ScpConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn h(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// First step of adversarial motion: `floor(switch_time · rate)`.
    pub fn fraud_switch_step(&self) -> usize {
        (self.fraud_switch_time * self.rate_hz + 1e-9).floor() as usize
    }

    pub fn initial_vehicle(&self) -> VehicleState {
        VehicleState::new(0.0, self.lane_center, 0.0, self.vehicle_speed, 0.0)
    }

    pub fn goal(&self) -> VehicleState {
        VehicleState::new(self.goal_distance, self.lane_center, 0.0, self.vehicle_speed, 0.0)
    }

    /// Replan steps at which the detector is evaluated: those with at least
    /// `WINDOW + 1` observations.
    pub fn evaluation_steps(&self) -> Vec<usize> {
        (0..self.steps)
            .step_by(self.replan_period.max(1))
            .filter(|&t| t + 1 > WINDOW)
            .collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("scenario.steps: must be > 0".into());
        }
        if self.replan_period == 0 {
            v.push("scenario.replan_period: must be > 0".into());
        } else if self.steps % self.replan_period != 0 {
            v.push("scenario.replan_period: must divide scenario.steps".into());
        }
        for (name, val) in [
            ("rate_hz", self.rate_hz),
            ("fraud_switch_time", self.fraud_switch_time),
            ("pedestrian_v_max", self.pedestrian_v_max),
            ("pedestrian_radius", self.pedestrian_radius),
            ("offset_std", self.offset_std),
            ("goal_distance", self.goal_distance),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("scenario.{name}: must be > 0"));
            }
        }
        for (name, val) in [
            ("offset_mean", self.offset_mean),
            ("vehicle_speed", self.vehicle_speed),
            ("lane_center", self.lane_center),
        ] {
            if !val.is_finite() {
                v.push(format!("scenario.{name}: must be finite"));
            }
        }
        if self.fraud_switch_step() >= self.steps {
            v.push("scenario.fraud_switch_time: must fall inside the run".into());
        }
        for w in [self.weights.w_pos, self.weights.w_vel, self.weights.w_ctrl, self.weights.terminal_factor] {
            if !(w > 0.0) {
                v.push("scenario.weights: all weights must be > 0".into());
                break;
            }
        }
        if !(self.weights.w_pos > self.weights.w_vel) {
            v.push("scenario.weights: w_pos must exceed w_vel".into());
        }
        let road = &self.road;
        if !(road.half_width > road.boundary_margin && road.boundary_margin >= 0.0 && road.pedestrian_margin > 0.0) {
            v.push("scenario.road: need half_width > boundary_margin >= 0 and pedestrian_margin > 0".into());
        }
        v.extend(self.limits.violations().into_iter().map(|m| format!("scenario.limits: {m}")));
        v.extend(self.scp.violations().into_iter().map(|m| format!("scenario.{m}")));
        v
    }
}

/// How the pedestrian moves. `path` is already placed in the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PedestrianBehavior {
    Nominal { path: Vec<Point> },
    /// Replays `path` until `switch_step`, then walks straight at the car,
    /// `step_length` per step.
    InsuranceFraud {
        path: Vec<Point>,
        switch_step: usize,
        step_length: f64,
    },
}

impl PedestrianBehavior {
    pub fn path(&self) -> &[Point] {
        match self {
            PedestrianBehavior::Nominal { path } | PedestrianBehavior::InsuranceFraud { path, .. } => path,
        }
    }

    pub fn switch_step(&self) -> Option<usize> {
        match self {
            PedestrianBehavior::Nominal { .. } => None,
            PedestrianBehavior::InsuranceFraud { switch_step, .. } => Some(*switch_step),
        }
    }
}

/// Pedestrian position at step `t`, given its position at `t - 1` and the
/// car's position. Replayed steps index the path, clamping at its end.
pub fn pedestrian_position(b: &PedestrianBehavior, t: usize, previous: Point, vehicle: Point) -> Point {
    match b {
        PedestrianBehavior::InsuranceFraud {
            switch_step,
            step_length,
            ..
        } if t >= *switch_step && t > 0 => {
            let d = [vehicle[0] - previous[0], vehicle[1] - previous[1]];
            let n = d[0].hypot(d[1]);
            if n == 0.0 {
                previous
            } else {
                [previous[0] + step_length * d[0] / n, previous[1] + step_length * d[1] / n]
            }
        }
        _ => {
            let path = b.path();
            path[t.min(path.len() - 1)]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimOutcome {
    PassedSafely,
    StoppedSafely,
    Collision,
}

/// One detector evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub ood: bool,
}

/// One replanning event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replan {
    pub step: usize,
    pub evaluation: Option<Evaluation>,
    /// Whether the reachable-set MPC was solved.
    pub reachable: bool,
    pub status: MpcStatus,
    pub scp_iterations: usize,
    /// Independent check of the solved plan (before any braking fallback).
    pub check: Option<PlanCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub mode: ControllerMode,
    pub seed: u64,
    pub source_id: String,
    /// Pedestrian start x relative to the car.
    pub offset: f64,
    pub fraud_switch: Option<usize>,
    pub vehicle: Vec<VehicleState>,
    pub pedestrian: Vec<Point>,
    pub replans: Vec<Replan>,
    pub min_distance: f64,
    pub outcome: SimOutcome,
}

impl TrialRecord {
    pub fn evaluations(&self) -> impl Iterator<Item = (usize, Evaluation)> + '_ {
        self.replans.iter().filter_map(|r| r.evaluation.map(|e| (r.step, e)))
    }

    /// Evaluations made strictly after the fraud switch.
    pub fn post_switch_evaluations(&self) -> Vec<(usize, Evaluation)> {
        match self.fraud_switch {
            Some(s) => self.evaluations().filter(|(t, _)| *t > s).collect(),
            None => Vec::new(),
        }
    }

    /// 1-based index, among post-switch evaluations, of the first OOD flag.
    pub fn first_flag_after_switch(&self) -> Option<usize> {
        self.post_switch_evaluations().iter().position(|(_, e)| e.ood).map(|i| i + 1)
    }

    /// Whether the reachable-set MPC produced the control applied at `step`.
    pub fn reachable_at(&self, step: usize) -> bool {
        self.replans
            .iter()
            .rev()
            .find(|r| r.step <= step)
            .map(|r| r.reachable)
            .unwrap_or(false)
    }

    pub fn fallbacks(&self) -> usize {
        self.replans.iter().filter(|r| r.status == MpcStatus::Infeasible).count()
    }

    /// CSV `step,x,y,theta,V,kappa,mode_flag`.
    pub fn write_vehicle_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["step", "x", "y", "theta", "V", "kappa", "mode_flag"])
            .map_err(fmt_err)?;
        for (k, s) in self.vehicle.iter().enumerate() {
            let flag = if self.reachable_at(k) { "1" } else { "0" };
            w.write_record([
                k.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.theta.to_string(),
                s.v.to_string(),
                s.kappa.to_string(),
                flag.to_string(),
            ])
            .map_err(fmt_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    /// The pedestrian's realized path as a trajectory.
    pub fn pedestrian_trajectory(&self, rate_hz: f64) -> Result<Trajectory> {
        Trajectory::new(format!("{}-sim", self.source_id), rate_hz, self.pedestrian.clone())
    }
}

/// Collision below the 2 m margin; otherwise passed iff the car ends ahead
/// of the pedestrian.
pub fn classify_outcome(min_distance: f64, final_vehicle_x: f64, final_pedestrian_x: f64) -> SimOutcome {
    if min_distance < 2.0 {
        SimOutcome::Collision
    } else if final_vehicle_x > final_pedestrian_x {
        SimOutcome::PassedSafely
    } else {
        SimOutcome::StoppedSafely
    }
}

/// [`classify_outcome`] applied to a finished record.
pub fn classify_record(r: &TrialRecord) -> SimOutcome {
    let v = r.vehicle.last().map(|s| s.x).unwrap_or(f64::NEG_INFINITY);
    let p = r.pedestrian.last().map(|p| p[0]).unwrap_or(f64::INFINITY);
    classify_outcome(r.min_distance, v, p)
}

/// Places `source` in the scene: its first point moves to x = `offset`
/// (relative to the car's start), y is kept.
pub fn place_path(source: &Trajectory, offset: f64, len: usize) -> Result<Vec<Point>> {
    if source.len() < len {
        return Err(Error::arg(format!(
            "trajectory `{}` has {} points; the scenario needs {len}",
            source.id,
            source.len()
        )));
    }
    let dx = offset - source.positions[0][0];
    Ok(source.positions[..len].iter().map(|p| [p[0] + dx, p[1]]).collect())
}

/// Runs one closed-loop trial.
pub fn run_trial<P: Predictor + ?Sized>(
    cfg: &ScenarioConfig,
    spec: &TrialSpec,
    source: &Trajectory,
    predictor: &P,
    detector: &Detector,
) -> Result<TrialRecord> {
    if let Some(msg) = cfg.violations().first() {
        return Err(Error::arg(msg.clone()));
    }
    let h = cfg.h();
    let mut rng = stream_rng(spec.seed, 0);
    let offset = Normal::new(cfg.offset_mean, cfg.offset_std)
        .map_err(|e| Error::arg(e.to_string()))?
        .sample(&mut rng);
    let path = place_path(source, offset, cfg.steps + 1)?;
    let behavior = if spec.fraud {
        PedestrianBehavior::InsuranceFraud {
            path,
            switch_step: cfg.fraud_switch_step(),
            step_length: cfg.pedestrian_v_max * h,
        }
    } else {
        PedestrianBehavior::Nominal { path }
    };

    let mut vehicle = vec![cfg.initial_vehicle()];
    let mut pedestrian = vec![behavior.path()[0]];
    let mut replans = Vec::new();
    let mut plan: Vec<ControlInput> = Vec::new();
    for t in 0..cfg.steps {
        if t % cfg.replan_period == 0 {
            let (r, controls) = replan(cfg, spec.mode, t, &vehicle[t], &pedestrian, predictor, detector)?;
            replans.push(r);
            plan = controls;
        }
        let u = plan[t % cfg.replan_period];
        let here = vehicle[t];
        vehicle.push(step_dynamics(&here, &u, h));
        let p = pedestrian_position(&behavior, t + 1, pedestrian[t], here.position());
        pedestrian.push(p);
    }
    let min_distance = vehicle
        .iter()
        .zip(&pedestrian)
        .map(|(v, p)| dist(v.position(), *p))
        .fold(f64::INFINITY, f64::min);
    let mut record = TrialRecord {
        mode: spec.mode,
        seed: spec.seed,
        source_id: source.id.clone(),
        offset,
        fraud_switch: behavior.switch_step(),
        vehicle,
        pedestrian,
        replans,
        min_distance,
        outcome: SimOutcome::StoppedSafely,
    };
    record.outcome = classify_record(&record);
    Ok(record)
}

fn replan<P: Predictor + ?Sized>(
    cfg: &ScenarioConfig,
    mode: ControllerMode,
    t: usize,
    state: &VehicleState,
    observed: &[Point],
    predictor: &P,
    detector: &Detector,
) -> Result<(Replan, Vec<ControlInput>)> {
    let h = cfg.h();
    let horizon = cfg.steps - t;
    let evaluation = if observed.len() > WINDOW {
        let window = &observed[observed.len() - WINDOW..];
        let score = nonconformity(&predictor.predict(window))?;
        Some(Evaluation {
            score,
            ood: detector.detect(score),
        })
    } else {
        None
    };
    let flagged = evaluation.map(|e| e.ood).unwrap_or(false);
    let reachable = match mode {
        ControllerMode::Soda => flagged,
        ControllerMode::EnsemblesOnly => false,
        ControllerMode::ReachableOnly => true,
    };
    let prob = MpcProblem {
        initial: *state,
        horizon,
        h,
        goal: cfg.goal(),
        limits: cfg.limits,
        weights: cfg.weights,
        road: cfg.road,
    };
    let sol = if reachable {
        let here = *observed.last().expect("at least one observation");
        let discs = disc_sequence(
            ReachableDisc::at_agent(here, cfg.pedestrian_radius),
            cfg.pedestrian_v_max,
            h,
            horizon,
        );
        solve_mpc_reachable(&prob, &discs, &cfg.scp)
    } else {
        let predicted: Vec<Point> = rollout(predictor, observed, horizon, cfg.rate_hz)
            .into_iter()
            .map(|s| s.position)
            .collect();
        solve_mpc_nominal(&prob, &predicted, &cfg.scp)
    };
    let check = (!sol.used_fallback())
        .then(|| verify_plan(&sol.states, &sol.controls, h, &cfg.limits, &cfg.road, &sol.keep_outs));
    let record = Replan {
        step: t,
        evaluation,
        reachable,
        status: sol.status,
        scp_iterations: sol.iterations,
        check,
    };
    Ok((record, sol.controls))
}
