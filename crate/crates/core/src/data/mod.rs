//! Pedestrian trajectory data: ingestion, training pairs, splitting and
//! synthesis.

mod pairs;
mod synth;
mod trajectory;

pub use pairs::{make_pairs, reflect_balance, split_dataset, DataPair, DatasetSplit};
pub use synth::{synth_generate, synth_generate_with, SynthParams};
pub use trajectory::{load_trajectories, read_trajectories, save_trajectories, write_trajectories, Trajectory};
