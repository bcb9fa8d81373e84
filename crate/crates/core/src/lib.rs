//! Out-of-distribution-adaptive model predictive control for a vehicle
//! sharing the road with a crossing pedestrian.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: pedestrian trajectories, training pairs, dataset splitting and
//!   a parametric trajectory synthesizer.
//! * [`nn`]: small MLP regressors, Adam training, and the ensemble that turns
//!   member disagreement into a mean/covariance prediction.
//! * [`conformal`] and [`special`]: spectral-norm nonconformity scores,
//!   conformal threshold calibration and the exact Beta coverage analytics.
//! * [`qp`], [`vehicle`]: banded ADMM and interior-point QP solvers, the car
//!   model, reachable discs, and the sequential convex programming MPC built
//!   on top of them.
//! * [`sim`]: the closed-loop crossing scenario, batch evaluation and the
//!   coverage Monte Carlo experiment.
//! * [`gmm`]: weighted-determinant scoring of ingested Gaussian-mixture
//!   trajectory predictions.
//!
//! Batch workloads go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iteration otherwise.

pub mod conformal;
pub mod data;
pub mod error;
pub mod gmm;
pub mod nn;
pub mod par;
pub mod qp;
pub mod sim;
pub mod special;
pub mod vehicle;

pub use error::{Error, Result};

/// A planar point or vector in meters.
pub type Point = [f64; 2];

/// Frame rate of the pedestrian recordings, also the simulation rate.
pub const SAMPLE_RATE_HZ: f64 = 23.976;

/// Number of past positions fed to each predictor.
pub const WINDOW: usize = 14;

/// Pedestrian speed assumed while the observation history is too short for
/// the ensemble.
pub const BOOTSTRAP_SPEED: f64 = 1.1;

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
