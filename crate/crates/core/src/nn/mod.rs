//! Ensemble trajectory predictor.
//!
//! Each member is a small ReLU MLP mapping a window of past positions to the
//! next position. The ensemble summarises member outputs by their mean and
//! unbiased covariance; the covariance drives the OOD monitor.

mod adam;
mod ensemble;
mod mlp;
mod stats;

pub use adam::Adam;
pub use ensemble::{
    ensemble_stats, init_ensemble, load_weights, rollout, save_weights, train_ensemble, Ensemble,
    RolloutStep, TrainConfig, TrainReport,
};
pub use mlp::MlpModel;
pub use stats::PredictionStats;

use crate::Point;

/// Anything that turns a window of observed positions into a one-step
/// mean/covariance prediction.
pub trait Predictor: Sync {
    /// Number of positions in an input window.
    fn window(&self) -> usize;

    /// Prediction for the position following `window` (oldest first,
    /// `window.len() == self.window()`).
    fn predict(&self, window: &[Point]) -> PredictionStats;
}
