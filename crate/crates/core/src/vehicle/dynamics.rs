use serde::{Deserialize, Serialize};

use crate::Point;

/// Car state: planar position, heading, speed and path curvature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub kappa: f64,
}

/// Longitudinal acceleration and curvature rate ("pinch").
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub p: f64,
}

impl VehicleState {
    pub const DIM: usize = 5;

    pub fn new(x: f64, y: f64, theta: f64, v: f64, kappa: f64) -> Self {
        VehicleState {
            x,
            y,
            theta,
            v,
            kappa,
        }
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.v, self.kappa]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        VehicleState::new(s[0], s[1], s[2], s[3], s[4])
    }
}

impl ControlInput {
    pub const DIM: usize = 2;

    pub fn new(a: f64, p: f64) -> Self {
        ControlInput { a, p }
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.a, self.p]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        ControlInput::new(s[0], s[1])
    }
}

/// Physical limits enforced as MPC constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleLimits {
    pub v_max: f64,
    pub kappa_max: f64,
    pub a_max: f64,
    pub p_max: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        VehicleLimits {
            v_max: 20.0,
            kappa_max: 1.0 / 5.913,
            a_max: 5.0,
            p_max: 2.0,
        }
    }
}

impl VehicleLimits {
    pub fn admits_state(&self, s: &VehicleState, tol: f64) -> bool {
        s.v.abs() <= self.v_max + tol && s.kappa.abs() <= self.kappa_max + tol
    }

    pub fn admits_control(&self, u: &ControlInput, tol: f64) -> bool {
        u.a.abs() <= self.a_max + tol && u.p.abs() <= self.p_max + tol
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("v_max", self.v_max),
            ("kappa_max", self.kappa_max),
            ("a_max", self.a_max),
            ("p_max", self.p_max),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("vehicle.{name}: must be > 0"));
            }
        }
        v
    }
}

/// Forward-Euler step of the kinematic car.
pub fn step_dynamics(s: &VehicleState, u: &ControlInput, h: f64) -> VehicleState {
    let (sin, cos) = s.theta.sin_cos();
    VehicleState {
        x: s.x + h * s.v * cos,
        y: s.y + h * s.v * sin,
        theta: s.theta + h * s.v * s.kappa,
        v: s.v + h * u.a,
        kappa: s.kappa + h * u.p,
    }
}

/// Jacobians `(A, B)` of [`step_dynamics`] at `(s, u)`, row-major.
pub fn jacobians(s: &VehicleState, h: f64) -> ([[f64; 5]; 5], [[f64; 2]; 5]) {
    let (sin, cos) = s.theta.sin_cos();
    let a = [
        [1.0, 0.0, -h * s.v * sin, h * cos, 0.0],
        [0.0, 1.0, h * s.v * cos, h * sin, 0.0],
        [0.0, 0.0, 1.0, h * s.kappa, h * s.v],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ];
    let b = [
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, 0.0],
        [h, 0.0],
        [0.0, h],
    ];
    (a, b)
}

/// Rolls `controls` forward from `s0`; returns `controls.len() + 1` states.
pub fn rollout_controls(s0: &VehicleState, controls: &[ControlInput], h: f64) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*s0);
    for u in controls {
        let next = step_dynamics(out.last().unwrap(), u, h);
        out.push(next);
    }
    out
}
