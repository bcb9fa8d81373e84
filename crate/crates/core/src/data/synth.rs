use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::par::{map_indexed, stream_rng, Execution};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Parameters of the rectilinear-plus-jitter pedestrian generator.
///
/// Each trajectory walks at a constant nominal speed along a constant
/// heading, starting at `(0, start_y)`, with a stationary AR(1) positional
/// jitter added on each axis. Upward crossings are the mirror image of
/// downward ones and start at `(0, -start_y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// m/s
    pub mean_speed: f64,
    pub speed_std: f64,
    /// Heading of a downward crossing, radians.
    pub heading_mean: f64,
    pub heading_std: f64,
    /// Stationary standard deviation of the positional jitter, meters.
    pub jitter_std: f64,
    /// Lag-one correlation of the jitter; higher is smoother.
    pub jitter_correlation: f64,
    /// Number of samples per trajectory.
    pub length: usize,
    /// Probability that a trajectory crosses upward.
    pub crossing_direction_prob: f64,
    /// Distance from the road centerline at which crossings start, meters.
    pub start_y: f64,
    pub sample_rate_hz: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            mean_speed: 1.1,
            speed_std: 0.12,
            heading_mean: -std::f64::consts::FRAC_PI_2,
            heading_std: 0.1,
            jitter_std: 0.02,
            jitter_correlation: 0.9,
            length: 154,
            crossing_direction_prob: 0.5,
            start_y: 5.0,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }
}

impl SynthParams {
    /// Human-readable descriptions of every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("speed_std", self.speed_std),
            ("heading_std", self.heading_std),
            ("jitter_std", self.jitter_std),
        ] {
            if !(val >= 0.0 && val.is_finite()) {
                v.push(format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.crossing_direction_prob) {
            v.push("crossing_direction_prob must be in [0,1]".into());
        }
        if !(self.jitter_correlation.abs() < 1.0) {
            v.push("jitter_correlation must be in (-1,1)".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            v.push("sample_rate_hz must be > 0".into());
        }
        if self.length < 2 {
            v.push("length must be >= 2".into());
        }
        if !(self.mean_speed.is_finite() && self.heading_mean.is_finite() && self.start_y.is_finite()) {
            v.push("mean_speed, heading_mean and start_y must be finite".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some(msg) => Err(Error::arg(msg.clone())),
            None => Ok(()),
        }
    }
}

/// Generates `n` i.i.d. trajectories. Trajectory `i` depends only on
/// `(seed, i)`, so output is identical under any execution policy.
pub fn synth_generate(params: &SynthParams, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    synth_generate_with(params, n, seed, Execution::default())
}

pub fn synth_generate_with(params: &SynthParams, n: usize, seed: u64, exec: Execution) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::arg("n must be positive"));
    }
    params.validate()?;
    Ok(map_indexed(n, exec, |i| generate_one(params, seed, i)))
}

fn generate_one(p: &SynthParams, seed: u64, index: usize) -> Trajectory {
    let mut rng = stream_rng(seed, index as u64);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let speed = p.mean_speed + p.speed_std * normal();
    let heading = p.heading_mean + p.heading_std * normal();
    let step = speed / p.sample_rate_hz;
    let (dx, dy) = (step * heading.cos(), step * heading.sin());

    let rho = p.jitter_correlation;
    let innovation = p.jitter_std * (1.0 - rho * rho).sqrt();
    let mut jitter = [p.jitter_std * normal(), p.jitter_std * normal()];
    let mut positions = Vec::with_capacity(p.length);
    for k in 0..p.length {
        if k > 0 {
            jitter = [
                rho * jitter[0] + innovation * normal(),
                rho * jitter[1] + innovation * normal(),
            ];
        }
        let kf = k as f64;
        positions.push([kf * dx + jitter[0], p.start_y + kf * dy + jitter[1]]);
    }
    let upward = rng.random::<f64>() < p.crossing_direction_prob;
    if upward {
        for q in &mut positions {
            q[1] = -q[1];
        }
    }
    Trajectory {
        id: format!("syn{seed}-{index}"),
        sample_rate_hz: p.sample_rate_hz,
        positions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist;

    #[test]
    fn noiseless_is_rectilinear_at_mean_speed() {
        let p = SynthParams {
            speed_std: 0.0,
            heading_std: 0.0,
            jitter_std: 0.0,
            ..SynthParams::default()
        };
        let t = &synth_generate(&p, 3, 1).unwrap()[0];
        let expected = 1.1 / SAMPLE_RATE_HZ;
        for w in t.positions.windows(2) {
            assert!((dist(w[0], w[1]) - expected).abs() < 1e-12);
            assert!(w[0][0].abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let p = SynthParams::default();
        assert_eq!(synth_generate(&p, 5, 9).unwrap(), synth_generate(&p, 5, 9).unwrap());
        assert_ne!(synth_generate(&p, 5, 9).unwrap(), synth_generate(&p, 5, 10).unwrap());
    }

    #[test]
    fn execution_policy_does_not_change_output() {
        let p = SynthParams::default();
        assert_eq!(
            synth_generate_with(&p, 16, 2, Execution::Sequential).unwrap(),
            synth_generate_with(&p, 16, 2, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn mean_step_matches_speed_monte_carlo() {
        let p = SynthParams::default();
        let trajs = synth_generate(&p, 1000, 4).unwrap();
        let per: Vec<f64> = trajs
            .iter()
            .map(|t| dist(t.positions[0], *t.positions.last().unwrap()) / (t.len() - 1) as f64)
            .collect();
        let n = per.len() as f64;
        let mean = per.iter().sum::<f64>() / n;
        let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let expected = p.mean_speed / p.sample_rate_hz;
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    #[test]
    fn both_directions_occur() {
        let trajs = synth_generate(&SynthParams::default(), 200, 8).unwrap();
        let up = trajs.iter().filter(|t| t.net_vertical() > 0.0).count();
        assert!(up > 60 && up < 140, "{up}");
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SynthParams {
            jitter_std: -1.0,
            ..SynthParams::default()
        };
        assert!(synth_generate(&bad, 1, 0).is_err());
        assert!(synth_generate(&SynthParams::default(), 0, 0).is_err());
    }
}
