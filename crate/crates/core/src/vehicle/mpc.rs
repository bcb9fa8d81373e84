use serde::{Deserialize, Serialize};

use super::dynamics::{jacobians, rollout_controls, step_dynamics, ControlInput, VehicleLimits, VehicleState};
use super::reach::ReachableDisc;
use super::scp::{scp_solve, Dynamics, InitialGuess, KeepOut, Ocp, ScpConfig, ScpStatus, StateBound};
use crate::Point;

/// The car as an SCP dynamics model with a fixed step.
pub struct VehicleModel {
    pub h: f64,
}

impl Dynamics for VehicleModel {
    fn nx(&self) -> usize {
        VehicleState::DIM
    }

    fn nu(&self) -> usize {
        ControlInput::DIM
    }

    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = step_dynamics(&VehicleState::from_slice(x), &ControlInput::from_slice(u), self.h);
        out.copy_from_slice(&n.to_array());
    }

    fn jacobians(&self, x: &[f64], _u: &[f64], a: &mut [f64], b: &mut [f64]) {
        let (ja, jb) = jacobians(&VehicleState::from_slice(x), self.h);
        for i in 0..5 {
            a[i * 5..i * 5 + 5].copy_from_slice(&ja[i]);
            b[i * 2..i * 2 + 2].copy_from_slice(&jb[i]);
        }
    }
}

/// Cost weights. Lateral offset and speed error are charged every stage; the
/// full goal position only at the terminal stage, scaled by
/// `terminal_factor` like the terminal speed error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcWeights {
    pub w_pos: f64,
    pub w_vel: f64,
    pub w_ctrl: f64,
    pub terminal_factor: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        MpcWeights {
            w_pos: 10.0,
            w_vel: 1.0,
            w_ctrl: 0.1,
            terminal_factor: 10.0,
        }
    }
}

/// Straight road along x with lanes symmetric about `y = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadGeometry {
    pub half_width: f64,
    /// Clearance between the car centre and the road edge.
    pub boundary_margin: f64,
    /// Clearance between the car centre and a pedestrian centre.
    pub pedestrian_margin: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        RoadGeometry {
            half_width: 3.6,
            boundary_margin: 0.9,
            pedestrian_margin: 2.0,
        }
    }
}

impl RoadGeometry {
    /// Admissible band for the car centre's y.
    pub fn y_band(&self) -> (f64, f64) {
        let w = self.half_width - self.boundary_margin;
        (-w, w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcProblem {
    pub initial: VehicleState,
    pub horizon: usize,
    pub h: f64,
    pub goal: VehicleState,
    pub limits: VehicleLimits,
    pub weights: MpcWeights,
    pub road: RoadGeometry,
}

impl MpcProblem {
    fn ocp(&self, keep_outs: Vec<KeepOut>) -> Ocp {
        let w = &self.weights;
        let tf = w.terminal_factor;
        let (ylo, yhi) = self.road.y_band();
        Ocp {
            x0: self.initial.to_array().to_vec(),
            horizon: self.horizon,
            reference: self.goal.to_array().to_vec(),
            stage_weights: vec![0.0, w.w_pos, 0.0, w.w_vel, 0.0],
            terminal_weights: vec![tf * w.w_pos, tf * w.w_pos, 0.0, tf * w.w_vel, 0.0],
            control_weights: vec![w.w_ctrl, w.w_ctrl],
            control_lo: vec![-self.limits.a_max, -self.limits.p_max],
            control_hi: vec![self.limits.a_max, self.limits.p_max],
            hard_bounds: vec![
                StateBound {
                    index: 3,
                    lo: -self.limits.v_max,
                    hi: self.limits.v_max,
                },
                StateBound {
                    index: 4,
                    lo: -self.limits.kappa_max,
                    hi: self.limits.kappa_max,
                },
            ],
            soft_bounds: vec![StateBound {
                index: 1,
                lo: ylo,
                hi: yhi,
            }],
            keep_outs,
        }
    }

    /// Cost `J` of a trajectory under this problem's weights.
    pub fn cost(&self, states: &[VehicleState], controls: &[ControlInput]) -> f64 {
        let s: Vec<Vec<f64>> = states.iter().map(|s| s.to_array().to_vec()).collect();
        let c: Vec<Vec<f64>> = controls.iter().map(|u| u.to_array().to_vec()).collect();
        self.ocp(Vec::new()).cost(&s, &c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpcStatus {
    Converged,
    /// Iteration cap reached with a constraint-satisfying incumbent.
    MaxIterations,
    /// No step could be accepted although the incumbent is feasible.
    NotConverged,
    /// No constraint-satisfying trajectory was found; the plan is the brake
    /// profile.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// `horizon + 1` states starting at the initial state.
    pub states: Vec<VehicleState>,
    pub controls: Vec<ControlInput>,
    pub status: MpcStatus,
    pub scp_status: ScpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub merit_trace: Vec<f64>,
    /// Constraint violation of the SCP result before any fallback.
    pub max_violation: f64,
    /// The keep-outs the plan was solved against.
    pub keep_outs: Vec<KeepOut>,
}

impl MpcSolution {
    pub fn used_fallback(&self) -> bool {
        self.status == MpcStatus::Infeasible
    }
}

/// Controls that bring the car to rest and straighten the wheel as fast as
/// the limits allow, then hold.
pub fn brake_profile(s0: &VehicleState, horizon: usize, h: f64, limits: &VehicleLimits) -> Vec<ControlInput> {
    let mut s = *s0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = (-s.v / h).clamp(-limits.a_max, limits.a_max);
        let p = (-s.kappa / h).clamp(-limits.p_max, limits.p_max);
        let u = ControlInput::new(a, p);
        s = step_dynamics(&s, &u, h);
        out.push(u);
    }
    out
}

fn finish(prob: &MpcProblem, sol: super::scp::ScpSolution, keep_outs: Vec<KeepOut>, cfg: &ScpConfig) -> MpcSolution {
    let feasible = sol.is_feasible(cfg.constraint_tolerance);
    let status = match (feasible, sol.status) {
        (false, _) => MpcStatus::Infeasible,
        (true, ScpStatus::Converged) => MpcStatus::Converged,
        (true, ScpStatus::MaxIterations) => MpcStatus::MaxIterations,
        (true, _) => MpcStatus::NotConverged,
    };
    let (states, controls) = if feasible {
        (
            sol.states.iter().map(|s| VehicleState::from_slice(s)).collect(),
            sol.controls.iter().map(|u| ControlInput::from_slice(u)).collect(),
        )
    } else {
        let controls = brake_profile(&prob.initial, prob.horizon, prob.h, &prob.limits);
        (rollout_controls(&prob.initial, &controls, prob.h), controls)
    };
    MpcSolution {
        objective: prob.cost(&states, &controls),
        states,
        controls,
        status,
        scp_status: sol.status,
        iterations: sol.iterations,
        merit_trace: sol.merit_trace,
        max_violation: sol.max_violation,
        keep_outs,
    }
}

/// Moves a guess point out of a disc sideways (across the road), toward the
/// side that stays inside the band `(lo, hi)` with the smaller move. Radial
/// projection would push points on the lane line along the road and leave
/// every supporting half-plane facing forward or backward.
fn project_out(p: Point, c: Point, r: f64, band: (f64, f64)) -> Point {
    let dx = p[0] - c[0];
    if dx.hypot(p[1] - c[1]) >= r {
        return p;
    }
    let half = (r * r - dx * dx).max(0.0).sqrt() * (1.0 + 1e-6);
    let up = c[1] + half;
    let down = c[1] - half;
    let cost = |y: f64| {
        let outside = (band.0 - y).max(y - band.1).max(0.0);
        (outside, (y - p[1]).abs())
    };
    let y = if cost(up) < cost(down) { up } else { down };
    [p[0], y]
}

/// MPC I: keep `pedestrian_margin` from a predicted agent position at every
/// stage (`predicted[τ - 1]` for stage `τ`).
pub fn solve_mpc_nominal(prob: &MpcProblem, predicted: &[Point], cfg: &ScpConfig) -> MpcSolution {
    let t = prob.horizon;
    assert_eq!(predicted.len(), t, "one predicted position per stage");
    let r = prob.road.pedestrian_margin;
    let keep_outs: Vec<KeepOut> = predicted
        .iter()
        .enumerate()
        .map(|(i, &c)| KeepOut {
            stage: i + 1,
            center: c,
            radius: r,
        })
        .collect();
    let s0 = prob.initial.to_array();
    let g = prob.goal.to_array();
    let states: Vec<Vec<f64>> = (0..=t)
        .map(|k| {
            let f = k as f64 / t as f64;
            let mut s: Vec<f64> = s0.iter().zip(&g).map(|(a, b)| a + f * (b - a)).collect();
            if k > 0 {
                let p = project_out([s[0], s[1]], predicted[k - 1], r, prob.road.y_band());
                s[0] = p[0];
                s[1] = p[1];
            }
            s
        })
        .collect();
    let guess = InitialGuess {
        states,
        controls: vec![vec![0.0, 0.0]; t],
    };
    let sol = scp_solve(&VehicleModel { h: prob.h }, &prob.ocp(keep_outs.clone()), &guess, cfg);
    finish(prob, sol, keep_outs, cfg)
}

/// MPC II: keep `pedestrian_margin` from every disc (`discs[τ - 1]` for
/// stage `τ`).
pub fn solve_mpc_reachable(prob: &MpcProblem, discs: &[ReachableDisc], cfg: &ScpConfig) -> MpcSolution {
    let t = prob.horizon;
    assert_eq!(discs.len(), t, "one disc per stage");
    let keep_outs: Vec<KeepOut> = discs
        .iter()
        .enumerate()
        .map(|(i, d)| KeepOut {
            stage: i + 1,
            center: d.center,
            radius: d.radius + prob.road.pedestrian_margin,
        })
        .collect();
    let guess = InitialGuess {
        states: vec![prob.initial.to_array().to_vec(); t + 1],
        controls: vec![vec![0.0, 0.0]; t],
    };
    let ocp = prob.ocp(keep_outs.clone());
    let model = VehicleModel { h: prob.h };
    let sol = scp_solve(&model, &ocp, &guess, cfg);
    if sol.is_feasible(cfg.constraint_tolerance) || discs.is_empty() {
        return finish(prob, sol, keep_outs, cfg);
    }
    // The stationary guess is far from dynamically consistent when the car is
    // fast; retry from a rollout that backs away from the disc.
    let growth = if t > 1 { (discs[1].radius - discs[0].radius) / prob.h } else { 0.0 };
    let controls = evasive_profile(&prob.initial, discs[0].center, growth, t, prob.h, &prob.limits);
    let states = rollout_controls(&prob.initial, &controls, prob.h);
    let retry = InitialGuess {
        states: states.iter().map(|s| s.to_array().to_vec()).collect(),
        controls: controls.iter().map(|u| u.to_array().to_vec()).collect(),
    };
    let mut second = scp_solve(&model, &ocp, &retry, cfg);
    second.iterations += sol.iterations;
    let best = if second.is_feasible(cfg.constraint_tolerance) { second } else { sol };
    finish(prob, best, keep_outs, cfg)
}

/// Controls that drive the car straight away from `center` (backward if the
/// center is ahead) at one m/s more than `growth`, straightening the wheel.
pub fn evasive_profile(
    s0: &VehicleState,
    center: Point,
    growth: f64,
    horizon: usize,
    h: f64,
    limits: &VehicleLimits,
) -> Vec<ControlInput> {
    let ahead = (center[0] - s0.x) * s0.theta.cos() + (center[1] - s0.y) * s0.theta.sin();
    let dir = if ahead >= 0.0 { -1.0 } else { 1.0 };
    let target = dir * (growth + 1.0).min(limits.v_max);
    let mut s = *s0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = ((target - s.v) / h).clamp(-limits.a_max, limits.a_max);
        let p = (-s.kappa / h).clamp(-limits.p_max, limits.p_max);
        let u = ControlInput::new(a, p);
        s = step_dynamics(&s, &u, h);
        out.push(u);
    }
    out
}
