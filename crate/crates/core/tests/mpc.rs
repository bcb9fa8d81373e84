mod common;

use std::time::Instant;

use common::toy;

use oodmpc::vehicle::{
    disc_sequence, solve_mpc_nominal, solve_mpc_reachable, verify_plan, MpcProblem, MpcStatus, MpcWeights,
    ReachableDisc, RoadGeometry, ScpConfig, ScpStatus, VehicleLimits, VehicleState,
};
use oodmpc::SAMPLE_RATE_HZ;

fn problem(horizon: usize) -> MpcProblem {
    MpcProblem {
        initial: VehicleState::new(0.0, -1.8, 0.0, 10.0, 0.0),
        horizon,
        h: 1.0 / SAMPLE_RATE_HZ,
        goal: VehicleState::new(70.0, -1.8, 0.0, 10.0, 0.0),
        limits: VehicleLimits::default(),
        weights: MpcWeights::default(),
        road: RoadGeometry::default(),
    }
}

fn check(prob: &MpcProblem, sol: &oodmpc::vehicle::MpcSolution) {
    let c = verify_plan(&sol.states, &sol.controls, prob.h, &prob.limits, &prob.road, &sol.keep_outs);
    assert!(c.passes(1e-6, 1e-3), "{c:?}");
}

#[test]
fn free_road_reaches_the_goal() {
    let prob = problem(150);
    let t0 = Instant::now();
    let sol = solve_mpc_nominal(&prob, &vec![[0.0, 100.0]; 150], &ScpConfig::default());
    eprintln!("free road: {:?} in {:?}, iters {}", sol.status, t0.elapsed(), sol.iterations);
    assert_eq!(sol.status, MpcStatus::Converged);
    let end = sol.states.last().unwrap();
    let err = (end.x - 70.0).hypot(end.y + 1.8);
    eprintln!("terminal error {err}, V {}", end.v);
    assert!(err < 0.5, "{err}");
    check(&prob, &sol);
    for w in sol.merit_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
    }
}

#[test]
fn far_obstacle_is_inactive() {
    let prob = problem(150);
    let cfg = ScpConfig::default();
    let a = solve_mpc_nominal(&prob, &vec![[35.0, 100.0]; 150], &cfg);
    let b = solve_mpc_nominal(&prob, &vec![[35.0, 1e4]; 150], &cfg);
    for (s, t) in a.states.iter().zip(&b.states) {
        assert!((s.x - t.x).abs() < 1e-6 && (s.y - t.y).abs() < 1e-6);
    }
}

#[test]
fn lane_obstacle_is_avoided() {
    let prob = problem(150);
    let t0 = Instant::now();
    let sol = solve_mpc_nominal(&prob, &vec![[35.0, -1.8]; 150], &ScpConfig::default());
    eprintln!("lane obstacle: {:?} in {:?}, iters {}", sol.status, t0.elapsed(), sol.iterations);
    assert_ne!(sol.status, MpcStatus::Infeasible);
    let min = sol
        .states
        .iter()
        .map(|s| (s.x - 35.0).hypot(s.y + 1.8))
        .fold(f64::INFINITY, f64::min);
    assert!(min >= 2.0 - 1e-3, "{min}");
    check(&prob, &sol);
}

#[test]
fn growing_disc_blocks_the_lane() {
    let prob = problem(150);
    let h = prob.h;
    let discs = disc_sequence(ReachableDisc::at_agent([40.0, -1.8], 0.5), 4.5, h, 150);
    let t0 = Instant::now();
    let sol = solve_mpc_reachable(&prob, &discs, &ScpConfig::default());
    eprintln!("disc: {:?} in {:?}, iters {}", sol.status, t0.elapsed(), sol.iterations);
    assert_ne!(sol.status, MpcStatus::Infeasible);
    assert!(sol.states.iter().all(|s| s.x < 40.0));
    check(&prob, &sol);
}

#[test]
fn static_off_lane_disc_gives_nominal_drive() {
    let prob = problem(150);
    let cfg = ScpConfig::default();
    let discs = disc_sequence(ReachableDisc::at_agent([35.0, 40.0], 0.5), 0.0, prob.h, 150);
    let a = solve_mpc_reachable(&prob, &discs, &cfg);
    let b = solve_mpc_nominal(&prob, &vec![[0.0, 100.0]; 150], &cfg);
    let (ea, eb) = (a.states.last().unwrap(), b.states.last().unwrap());
    assert!((ea.x - eb.x).abs() < 1e-3 && (ea.y - eb.y).abs() < 1e-3);
}

#[test]
fn disc_over_the_start_falls_back_to_braking() {
    let prob = problem(60);
    let discs = disc_sequence(ReachableDisc::at_agent([1.0, -1.8], 0.5), 50.0, prob.h, 60);
    let sol = solve_mpc_reachable(&prob, &discs, &ScpConfig::default());
    assert_eq!(sol.status, MpcStatus::Infeasible);
    assert!(sol.states.last().unwrap().v.abs() < 1e-9);
}

#[test]
fn toy_matches_grid_search() {
    let best = toy::grid_optimum();
    let sol = toy::solve_toy();
    eprintln!("toy: grid {best}, scp {} ({:?}, {} iters)", sol.objective, sol.status, sol.iterations);
    assert_eq!(sol.status, ScpStatus::Converged);
    assert!(sol.is_feasible(1e-6));
    assert!((sol.objective - best).abs() <= 0.02 * best, "{} vs {best}", sol.objective);
}
