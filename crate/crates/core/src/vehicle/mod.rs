//! Vehicle model, reachable sets and the two MPC formulations.

mod dynamics;
mod mpc;
mod reach;
pub mod scp;
mod verify;

pub use dynamics::{
    jacobians, rollout_controls, step_dynamics, ControlInput, VehicleLimits, VehicleState,
};
pub use mpc::{
    brake_profile, evasive_profile, solve_mpc_nominal, solve_mpc_reachable, MpcProblem, MpcSolution, MpcStatus,
    MpcWeights, RoadGeometry, VehicleModel,
};
pub use reach::{disc_sequence, reach_step, ReachableDisc};
pub use scp::{scp_solve, Dynamics, InitialGuess, KeepOut, Ocp, ScpConfig, ScpSolution, ScpStatus};
pub use verify::{verify_plan, PlanCheck};
