use serde::{Deserialize, Serialize};

use super::dynamics::{step_dynamics, ControlInput, VehicleLimits, VehicleState};
use super::mpc::RoadGeometry;
use super::scp::KeepOut;

/// Result of re-checking a plan against the true dynamics and constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanCheck {
    /// Largest per-step state mismatch against re-simulation.
    pub dynamics_defect: f64,
    /// Largest keep-out or road-band violation, meters.
    pub constraint_violation: f64,
    /// Largest speed/curvature/control limit violation.
    pub limit_violation: f64,
}

impl PlanCheck {
    pub fn passes(&self, defect_tol: f64, constraint_tol: f64) -> bool {
        self.dynamics_defect <= defect_tol
            && self.constraint_violation <= constraint_tol
            && self.limit_violation <= constraint_tol
    }
}

/// Independent feasibility check of `states`/`controls`.
pub fn verify_plan(
    states: &[VehicleState],
    controls: &[ControlInput],
    h: f64,
    limits: &VehicleLimits,
    road: &RoadGeometry,
    keep_outs: &[KeepOut],
) -> PlanCheck {
    assert_eq!(states.len(), controls.len() + 1);
    let mut defect = 0.0f64;
    for (k, u) in controls.iter().enumerate() {
        let sim = step_dynamics(&states[k], u, h).to_array();
        let got = states[k + 1].to_array();
        for (a, b) in sim.iter().zip(&got) {
            defect = defect.max((a - b).abs());
        }
    }
    let edge = road.half_width - road.boundary_margin;
    let mut viol = 0.0f64;
    for s in &states[1..] {
        viol = viol.max(s.y.abs() - edge);
    }
    for ko in keep_outs {
        let s = &states[ko.stage];
        let d = (s.x - ko.center[0]).hypot(s.y - ko.center[1]);
        viol = viol.max(ko.radius - d);
    }
    let mut lim = 0.0f64;
    for s in &states[1..] {
        lim = lim.max(s.v.abs() - limits.v_max).max(s.kappa.abs() - limits.kappa_max);
    }
    for u in controls {
        lim = lim.max(u.a.abs() - limits.a_max).max(u.p.abs() - limits.p_max);
    }
    PlanCheck {
        dynamics_defect: defect,
        constraint_violation: viol.max(0.0),
        limit_violation: lim.max(0.0),
    }
}
