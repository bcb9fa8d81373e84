use proptest::prelude::*;

use oodmpc::conformal::{calibrate_with, coverage_distribution, round_up, CalibrationTarget, ScoreSet};
use oodmpc::data::{load_trajectories, save_trajectories, Trajectory};
use oodmpc::gmm::{classify_trajectory, gmm_score, GaussianStep, GmmMode, GmmPrediction};
use oodmpc::sim::{classify_outcome, pedestrian_position, PedestrianBehavior, SimOutcome};
use oodmpc::SAMPLE_RATE_HZ;

fn cov() -> impl Strategy<Value = [[f64; 2]; 2]> {
    (0.01f64..5.0, 0.01f64..5.0, -0.99f64..0.99).prop_map(|(a, d, r)| {
        let b = r * (a * d).sqrt();
        [[a, b], [b, d]]
    })
}

fn prediction() -> impl Strategy<Value = GmmPrediction> {
    prop::collection::vec((0.01f64..1.0, cov()), 1..8).prop_map(|raw| {
        let total: f64 = raw.iter().map(|(w, _)| w).sum();
        GmmPrediction {
            agent: "a".into(),
            t: 0,
            modes: raw
                .into_iter()
                .map(|(w, c)| GmmMode {
                    p: w / total,
                    steps: vec![GaussianStep { mean: [0.0, 0.0], cov: c }],
                })
                .collect(),
        }
    })
}

proptest! {
    #[test]
    fn gmm_score_ignores_mode_order(pred in prediction(), rot in 0usize..8) {
        let mut shuffled = pred.clone();
        let n = shuffled.modes.len();
        shuffled.modes.rotate_left(rot % n);
        shuffled.modes.reverse();
        let a = gmm_score(&pred).unwrap();
        let b = gmm_score(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn scaling_covariances_scales_score_quadratically(pred in prediction(), c in 0.1f64..10.0) {
        let mut scaled = pred.clone();
        for m in &mut scaled.modes {
            for row in &mut m.steps[0].cov {
                for v in row.iter_mut() {
                    *v *= c;
                }
            }
        }
        let a = gmm_score(&pred).unwrap();
        let b = gmm_score(&scaled).unwrap();
        prop_assert!((b - c * c * a).abs() <= 1e-9 * b.max(1e-12));
    }

    #[test]
    fn more_steps_never_clear_a_flag(
        scores in prop::collection::vec(0.0f64..2.0, 0..30),
        extra in 0.0f64..2.0,
        c in 0.0f64..2.0,
    ) {
        let before = classify_trajectory(&scores, c);
        let mut longer = scores.clone();
        longer.push(extra);
        prop_assert!(!before || classify_trajectory(&longer, c));
    }

    #[test]
    fn exactly_k_scores_at_or_below_exact_threshold(
        raw in prop::collection::hash_set(0u32..1_000_000, 2..200),
        frac in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = raw.into_iter().map(|v| v as f64 * 1e-6).collect();
        let n = scores.len();
        let k = 1 + ((n - 1) as f64 * frac) as usize;
        let set = ScoreSet::new(scores.clone()).unwrap();
        let d = calibrate_with(&set, CalibrationTarget::Index(k), None).unwrap();
        prop_assert_eq!(scores.iter().filter(|&&s| !d.detect(s)).count(), k);

        let mut reversed = scores;
        reversed.reverse();
        let again = calibrate_with(&ScoreSet::new(reversed).unwrap(), CalibrationTarget::Index(k), None).unwrap();
        prop_assert_eq!(again.threshold, d.threshold);
    }

    #[test]
    fn rounding_up_is_tight(v in 0.0f64..100.0, decimals in 0u32..6) {
        let r = round_up(v, decimals);
        let step = 10f64.powi(-(decimals as i32));
        prop_assert!(r >= v);
        prop_assert!(r - v <= step * (1.0 + 1e-9));
    }

    #[test]
    fn coverage_cdf_is_monotone(n in 10usize..500, kf in 0.0f64..1.0, x in 0.0f64..1.0, dx in 0.0f64..0.2) {
        let k = 1 + ((n - 1) as f64 * kf) as usize;
        let dist = coverage_distribution(n, k).unwrap();
        let y = (x + dx).min(1.0);
        prop_assert!(dist.cdf(x) <= dist.cdf(y) + 1e-12);
        let p = dist.probability_between(x, y);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p));
    }

    #[test]
    fn fraud_steps_have_fixed_length(
        prev in (-50.0f64..50.0, -10.0f64..10.0),
        car in (-50.0f64..50.0, -5.0f64..5.0),
        len in 0.01f64..0.5,
    ) {
        prop_assume!((prev.0 - car.0).hypot(prev.1 - car.1) > 1e-6);
        let b = PedestrianBehavior::InsuranceFraud {
            path: vec![[0.0, 0.0]; 4],
            switch_step: 2,
            step_length: len,
        };
        let prev = [prev.0, prev.1];
        let car = [car.0, car.1];
        let next = pedestrian_position(&b, 3, prev, car);
        let moved = (next[0] - prev[0]).hypot(next[1] - prev[1]);
        prop_assert!((moved - len).abs() < 1e-12);
        let before = (prev[0] - car[0]).hypot(prev[1] - car[1]);
        let after = (next[0] - car[0]).hypot(next[1] - car[1]);
        prop_assert!(after < before);
    }

    #[test]
    fn outcome_depends_on_distance_first(d in 0.0f64..10.0, vx in -10.0f64..100.0, px in -10.0f64..100.0) {
        let o = classify_outcome(d, vx, px);
        if d < 2.0 {
            prop_assert_eq!(o, SimOutcome::Collision);
        } else if vx > px {
            prop_assert_eq!(o, SimOutcome::PassedSafely);
        } else {
            prop_assert_eq!(o, SimOutcome::StoppedSafely);
        }
    }
}

#[test]
fn trajectories_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let trajs = vec![
        Trajectory::new("a", SAMPLE_RATE_HZ, vec![[0.1, -2.0], [0.2, -1.95], [1.0 / 3.0, 1e-17]]).unwrap(),
        Trajectory::new("b", SAMPLE_RATE_HZ, vec![[5.0, 5.0]]).unwrap(),
    ];
    save_trajectories(&path, &trajs).unwrap();
    assert_eq!(load_trajectories(&path, SAMPLE_RATE_HZ).unwrap(), trajs);
}
