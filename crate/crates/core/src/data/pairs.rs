use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::par::stream_rng;
use crate::{Error, Point, Result, WINDOW};

/// A window of consecutive positions and the position that follows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPair {
    /// Oldest first.
    pub window: Vec<Point>,
    pub target: Point,
}

impl DataPair {
    /// The window flattened as `x0, y0, x1, y1, ...`.
    pub fn flat_window(&self) -> Vec<f64> {
        self.window.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

/// All `len - window` training pairs of a trajectory; pair `k` starts at
/// position `k`. Trajectories that are too short yield no pairs.
pub fn make_pairs(traj: &Trajectory, window: usize) -> Vec<DataPair> {
    if window == 0 || traj.len() <= window {
        return Vec::new();
    }
    traj.positions
        .windows(window + 1)
        .map(|w| DataPair {
            window: w[..window].to_vec(),
            target: w[window],
        })
        .collect()
}

/// Training pairs, a calibration set with exactly one pair per non-test
/// trajectory, and whole held-out test trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_pairs: Vec<DataPair>,
    pub calibration_pairs: Vec<DataPair>,
    pub test_trajectories: Vec<Trajectory>,
    pub seed: u64,
}

/// Holds out `n_test` random trajectories, then removes one uniformly chosen
/// pair from every remaining trajectory for calibration. Only the removed
/// pair leaves the training set; overlapping windows stay in.
pub fn split_dataset(trajs: &[Trajectory], n_test: usize, seed: u64) -> Result<DatasetSplit> {
    if n_test >= trajs.len() {
        return Err(Error::arg(format!(
            "n_test ({n_test}) must be smaller than the number of trajectories ({})",
            trajs.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; trajs.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }

    let mut split = DatasetSplit {
        train_pairs: Vec::new(),
        calibration_pairs: Vec::with_capacity(trajs.len() - n_test),
        test_trajectories: order[..n_test].iter().map(|&i| trajs[i].clone()).collect(),
        seed,
    };
    for (traj, _) in trajs.iter().zip(&is_test).filter(|(_, t)| !**t) {
        let mut pairs = make_pairs(traj, WINDOW);
        if pairs.is_empty() {
            return Err(Error::arg(format!(
                "trajectory `{}` has {} points, too short for a {}-step window",
                traj.id,
                traj.len(),
                WINDOW
            )));
        }
        let pick = rng.random_range(0..pairs.len());
        split.calibration_pairs.push(pairs.swap_remove(pick));
        split.train_pairs.extend(pairs);
    }
    Ok(split)
}

/// Reflects upward-moving trajectories about `y = 0` so every trajectory
/// moves downward (or is level). Idempotent.
pub fn reflect_balance(trajs: &[Trajectory]) -> Vec<Trajectory> {
    trajs
        .iter()
        .map(|t| {
            if t.net_vertical() > 0.0 {
                Trajectory {
                    positions: t.positions.iter().map(|p| [p[0], -p[1]]).collect(),
                    ..t.clone()
                }
            } else {
                t.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: usize, len: usize, vy: f64) -> Trajectory {
        let pts = (0..len).map(|k| [id as f64 + 0.01 * k as f64, vy * k as f64]).collect();
        Trajectory::new(format!("t{id}"), 23.976, pts).unwrap()
    }

    #[test]
    fn pair_counts() {
        assert_eq!(make_pairs(&line(0, 154, -0.05), 14).len(), 140);
        assert_eq!(make_pairs(&line(0, 15, -0.05), 14).len(), 1);
        assert!(make_pairs(&line(0, 14, -0.05), 14).is_empty());
    }

    #[test]
    fn pair_k_starts_at_k() {
        let t = line(3, 40, -0.05);
        for (k, p) in make_pairs(&t, 14).iter().enumerate() {
            assert_eq!(p.window[0], t.positions[k]);
            assert_eq!(p.target, t.positions[k + 14]);
            assert_eq!(p.flat_window().len(), 28);
        }
    }

    #[test]
    fn split_sizes_and_bookkeeping() {
        let trajs: Vec<_> = (0..110).map(|i| line(i, 154, -0.05)).collect();
        let s = split_dataset(&trajs, 10, 3).unwrap();
        assert_eq!(s.calibration_pairs.len(), 100);
        assert_eq!(s.test_trajectories.len(), 10);
        // Count oracle: every non-test trajectory contributes 140 pairs.
        assert_eq!(s.train_pairs.len() + s.calibration_pairs.len(), 100 * 140);
    }

    #[test]
    fn split_is_deterministic() {
        let trajs: Vec<_> = (0..20).map(|i| line(i, 30, -0.05)).collect();
        assert_eq!(split_dataset(&trajs, 4, 11).unwrap(), split_dataset(&trajs, 4, 11).unwrap());
        assert_ne!(split_dataset(&trajs, 4, 11).unwrap(), split_dataset(&trajs, 4, 12).unwrap());
    }

    #[test]
    fn split_partitions_pairs() {
        let trajs: Vec<_> = (0..12).map(|i| line(i, 25, -0.05)).collect();
        let s = split_dataset(&trajs, 2, 5).unwrap();
        for c in &s.calibration_pairs {
            assert!(!s.train_pairs.contains(c));
        }
        for t in &s.test_trajectories {
            for p in make_pairs(t, 14) {
                assert!(!s.train_pairs.contains(&p) && !s.calibration_pairs.contains(&p));
            }
        }
    }

    #[test]
    fn split_rejects_bad_arguments() {
        let trajs: Vec<_> = (0..5).map(|i| line(i, 30, -0.05)).collect();
        assert!(split_dataset(&trajs, 5, 0).is_err());
        let mut short = trajs.clone();
        short.push(line(9, 10, -0.05));
        assert!(split_dataset(&short, 0, 0).is_err());
    }

    #[test]
    fn reflection_cases() {
        let down = line(0, 20, -0.05);
        let up = line(1, 20, 0.05);
        let flat = line(2, 20, 0.0);
        let out = reflect_balance(&[down.clone(), up.clone(), flat.clone()]);
        assert_eq!(out[0], down);
        assert_eq!(out[2], flat);
        for (a, b) in out[1].positions.iter().zip(&up.positions) {
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1], -b[1]);
        }
        assert_eq!(reflect_balance(&out), out);
        assert!(out.iter().all(|t| t.net_vertical() <= 0.0));
        let n: usize = out.iter().map(|t| make_pairs(t, 14).len()).sum();
        assert_eq!(n, 3 * 6);
    }
}
