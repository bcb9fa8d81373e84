use serde::{Deserialize, Serialize};

use crate::Point;

/// Mean and covariance of a set of point predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub mean: Point,
    pub covariance: [[f64; 2]; 2],
}

impl PredictionStats {
    /// Sample mean and unbiased (`1/(n-1)`) covariance. Needs at least two
    /// samples.
    pub fn from_samples(samples: &[Point]) -> PredictionStats {
        let n = samples.len();
        assert!(n >= 2, "unbiased covariance needs at least two samples");
        let nf = n as f64;
        // deviations from the first sample keep identical samples exactly
        // degenerate and avoid cancellation for tightly clustered members
        let p0 = samples[0];
        let shift = samples.iter().fold([0.0, 0.0], |acc, p| {
            [acc[0] + (p[0] - p0[0]), acc[1] + (p[1] - p0[1])]
        });
        let shift = [shift[0] / nf, shift[1] / nf];
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in samples {
            let dx = p[0] - p0[0] - shift[0];
            let dy = p[1] - p0[1] - shift[1];
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let d = nf - 1.0;
        let mean = [p0[0] + shift[0], p0[1] + shift[1]];
        PredictionStats {
            mean,
            covariance: [[sxx / d, sxy / d], [sxy / d, syy / d]],
        }
    }

    /// A point prediction with no spread.
    pub fn certain(mean: Point) -> PredictionStats {
        PredictionStats {
            mean,
            covariance: [[0.0; 2]; 2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_member_hand_example() {
        let s = PredictionStats::from_samples(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(s.mean, [1.0, 0.0]);
        assert_eq!(s.covariance, [[2.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let s = PredictionStats::from_samples(&[[0.3, -1.0]; 10]);
        assert_eq!(s.covariance, [[0.0; 2]; 2]);
    }
}
