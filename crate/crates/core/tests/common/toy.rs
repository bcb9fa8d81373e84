//! A five-step steering problem with one keep-out disc, small enough to
//! solve by exhaustive control-grid search.

use oodmpc::vehicle::{scp_solve, Dynamics, InitialGuess, KeepOut, Ocp, ScpConfig, ScpSolution};

/// Planar point at unit speed steering its heading.
struct Heading;

impl Dynamics for Heading {
    fn nx(&self) -> usize {
        3
    }
    fn nu(&self) -> usize {
        1
    }
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + x[2].cos();
        out[1] = x[1] + x[2].sin();
        out[2] = x[2] + u[0];
    }
    fn jacobians(&self, x: &[f64], _u: &[f64], a: &mut [f64], b: &mut [f64]) {
        a.copy_from_slice(&[1.0, 0.0, -x[2].sin(), 0.0, 1.0, x[2].cos(), 0.0, 0.0, 1.0]);
        b.copy_from_slice(&[0.0, 0.0, 1.0]);
    }
}

const CENTER: [f64; 2] = [2.5, 0.4];
const RADIUS: f64 = 1.0;
const GOAL: [f64; 2] = [5.0, 0.0];
const RHO: f64 = 0.05;

fn toy_cost(controls: &[f64]) -> Option<f64> {
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    let mut j = 0.0;
    for &u in controls {
        x += th.cos();
        y += th.sin();
        th += u;
        j += RHO * u * u;
        if (x - CENTER[0]).hypot(y - CENTER[1]) < RADIUS {
            return None;
        }
    }
    Some(j + (x - GOAL[0]).powi(2) + (y - GOAL[1]).powi(2))
}

/// Exhaustive search over a 21-level control grid, then the best coarse
/// points are refined by shrinking 3^5 neighborhood grids.
pub fn grid_optimum() -> f64 {
    let levels: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
    let mut coarse: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut idx = [0usize; 5];
    loop {
        let u: Vec<f64> = idx.iter().map(|&i| levels[i]).collect();
        if let Some(j) = toy_cost(&u) {
            coarse.push((j, u));
        }
        let mut d = 0;
        while d < 5 {
            idx[d] += 1;
            if idx[d] < levels.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == 5 {
            break;
        }
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for (j0, u0) in coarse.iter().take(20) {
        let (mut j, mut u) = (*j0, u0.clone());
        let mut step = 0.05;
        while step > 1e-6 {
            let mut improved = false;
            for code in 0..243usize {
                let mut c = code;
                let cand: Vec<f64> = u
                    .iter()
                    .map(|&v| {
                        let off = (c % 3) as f64 - 1.0;
                        c /= 3;
                        (v + off * step).clamp(-1.0, 1.0)
                    })
                    .collect();
                if let Some(jc) = toy_cost(&cand) {
                    if jc < j {
                        j = jc;
                        u = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.min(j);
    }
    best
}

/// Solves the toy with SCP from a straight-line guess.
pub fn solve_toy() -> ScpSolution {
    let ocp = Ocp {
        x0: vec![0.0, 0.0, 0.0],
        horizon: 5,
        reference: vec![GOAL[0], GOAL[1], 0.0],
        stage_weights: vec![0.0; 3],
        terminal_weights: vec![1.0, 1.0, 0.0],
        control_weights: vec![RHO],
        control_lo: vec![-1.0],
        control_hi: vec![1.0],
        hard_bounds: vec![],
        soft_bounds: vec![],
        keep_outs: (1..=5)
            .map(|stage| KeepOut {
                stage,
                center: CENTER,
                radius: RADIUS,
            })
            .collect(),
    };
    let guess = InitialGuess {
        states: (0..=5).map(|k| vec![k as f64, 0.0, 0.0]).collect(),
        controls: vec![vec![0.0]; 5],
    };
    scp_solve(&Heading, &ocp, &guess, &ScpConfig::default())
}
