use serde::{Deserialize, Serialize};

use crate::Point;

/// Positions an agent of bounded speed can occupy: a disc around its last
/// observed position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachableDisc {
    pub center: Point,
    pub radius: f64,
}

impl ReachableDisc {
    /// The disc at `tau = 0`: the agent's own footprint.
    pub fn at_agent(center: Point, agent_radius: f64) -> Self {
        ReachableDisc {
            center,
            radius: agent_radius,
        }
    }

    /// `agent_radius + tau * h * v_max`, starting from this disc's radius.
    pub fn radius_at(&self, tau: usize, v_max: f64, h: f64) -> f64 {
        self.radius + tau as f64 * h * v_max
    }

    pub fn contains(&self, p: Point) -> bool {
        crate::dist(self.center, p) <= self.radius
    }
}

/// One step of reachability: the radius grows by `v_max * h`.
pub fn reach_step(d: &ReachableDisc, v_max: f64, h: f64) -> ReachableDisc {
    ReachableDisc {
        center: d.center,
        radius: d.radius + v_max * h,
    }
}

/// Discs for `tau = 1..=horizon`.
pub fn disc_sequence(start: ReachableDisc, v_max: f64, h: f64, horizon: usize) -> Vec<ReachableDisc> {
    let mut out = Vec::with_capacity(horizon);
    let mut d = start;
    for _ in 0..horizon {
        d = reach_step(&d, v_max, h);
        out.push(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn growth_over_ten_steps() {
        let h = 1.0 / 23.976;
        let d = ReachableDisc::at_agent([40.0, 2.0], 0.5);
        let seq = disc_sequence(d, 4.5, h, 10);
        assert!((seq[9].radius - 0.5 - 45.0 / 23.976).abs() < 1e-12);
        assert!((seq[9].radius - 0.5 - 1.877).abs() < 1e-3);
        assert!(seq.windows(2).all(|w| w[1].radius > w[0].radius));
        assert!((d.radius_at(10, 4.5, h) - seq[9].radius).abs() < 1e-12);
    }

    #[test]
    fn zero_speed_is_identity() {
        let d = ReachableDisc::at_agent([1.0, 2.0], 0.5);
        assert_eq!(reach_step(&d, 0.0, 0.1), d);
    }

    #[test]
    fn bounded_walks_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (v_max, h) = (4.5, 1.0 / 23.976);
        let start = ReachableDisc::at_agent([3.0, -1.0], 0.5);
        for _ in 0..10_000 {
            let mut p = start.center;
            let mut d = start;
            for _ in 0..30 {
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let len = rng.random_range(0.0..=1.0) * v_max * h;
                p = [p[0] + len * ang.cos(), p[1] + len * ang.sin()];
                d = reach_step(&d, v_max, h);
                assert!(crate::dist(p, d.center) <= d.radius - start.radius + 1e-12);
                assert!(d.contains(p));
            }
        }
    }
}
