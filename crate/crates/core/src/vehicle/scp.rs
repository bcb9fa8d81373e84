//! Sequential convex programming for trajectory optimization with nonlinear
//! dynamics and circular keep-out zones.
//!
//! Each outer iteration linearizes the dynamics about the incumbent, replaces
//! every keep-out disc by its supporting half-plane, and solves the resulting
//! QP inside a box trust region on the controls. Road bands and keep-outs are
//! softened with penalized slacks so the subproblem is always feasible; the
//! candidate controls are rolled out through the true dynamics and accepted
//! by a merit ratio test.

use serde::{Deserialize, Serialize};

use crate::qp::{self, QpMethod, QpProblem, QpSettings, QpStatus, SparseMatrix};
use crate::Point;

/// Discrete-time dynamics `x⁺ = f(x, u)`.
pub trait Dynamics: Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Row-major `∂f/∂x` (nx×nx) and `∂f/∂u` (nx×nu) at `(x, u)`.
    fn jacobians(&self, x: &[f64], u: &[f64], a: &mut [f64], b: &mut [f64]);
    /// Indices of the planar position within the state.
    fn position_indices(&self) -> (usize, usize) {
        (0, 1)
    }
}

/// `lo <= x[index] <= hi` at every stage `1..=T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBound {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

/// `‖position(x_stage) - center‖ >= radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeepOut {
    pub stage: usize,
    pub center: Point,
    pub radius: f64,
}

/// Optimal control problem over stages `0..T` with fixed `x0`.
///
/// Cost: `Σ_{k<T} Σ_i w_i (x_k,i − r_i)² + Σ_i w^T_i (x_T,i − r_i)² + Σ_k Σ_j c_j u_k,j²`
/// with the first state term starting at `k = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ocp {
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub reference: Vec<f64>,
    pub stage_weights: Vec<f64>,
    pub terminal_weights: Vec<f64>,
    pub control_weights: Vec<f64>,
    pub control_lo: Vec<f64>,
    pub control_hi: Vec<f64>,
    pub hard_bounds: Vec<StateBound>,
    pub soft_bounds: Vec<StateBound>,
    pub keep_outs: Vec<KeepOut>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScpConfig {
    pub max_iterations: usize,
    /// Converged when an accepted step moves every control by less than this
    /// fraction of its half-range.
    pub step_tolerance: f64,
    /// Relative merit change regarded as no progress.
    pub merit_tolerance: f64,
    /// Initial trust radius as a fraction of each control's half-range.
    pub trust_radius: f64,
    pub trust_min: f64,
    pub trust_max: f64,
    pub shrink: f64,
    pub grow: f64,
    pub accept_ratio: f64,
    pub grow_ratio: f64,
    /// Largest constraint violation (meters) of a feasible solution.
    pub constraint_tolerance: f64,
    pub slack_linear: f64,
    pub slack_quadratic: f64,
    /// Keep-out radii are enlarged by this much inside the subproblem only,
    /// absorbing the chord error of the supporting half-planes.
    pub keep_out_buffer: f64,
    pub qp: QpSettings,
}

impl Default for ScpConfig {
    fn default() -> Self {
        ScpConfig {
            max_iterations: 40,
            step_tolerance: 1e-4,
            merit_tolerance: 1e-5,
            trust_radius: 1.0,
            trust_min: 1e-5,
            trust_max: 1.0,
            shrink: 0.5,
            grow: 2.0,
            accept_ratio: 0.1,
            grow_ratio: 0.75,
            constraint_tolerance: 1e-4,
            slack_linear: 1e6,
            slack_quadratic: 1e4,
            keep_out_buffer: 1e-3,
            qp: QpSettings {
                method: QpMethod::InteriorPoint,
                ..QpSettings::default()
            },
        }
    }
}

impl ScpConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("max_iterations", self.max_iterations as f64),
            ("step_tolerance", self.step_tolerance),
            ("merit_tolerance", self.merit_tolerance),
            ("trust_radius", self.trust_radius),
            ("trust_min", self.trust_min),
            ("trust_max", self.trust_max),
            ("constraint_tolerance", self.constraint_tolerance),
            ("slack_linear", self.slack_linear),
        ];
        for (name, val) in positive {
            if !(val > 0.0) {
                v.push(format!("scp.{name}: must be > 0"));
            }
        }
        if !(self.keep_out_buffer >= 0.0) {
            v.push("scp.keep_out_buffer: must be >= 0".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            v.push("scp.shrink: must be in (0, 1)".into());
        }
        if !(self.grow >= 1.0) {
            v.push("scp.grow: must be >= 1".into());
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScpStatus {
    Converged,
    MaxIterations,
    /// The trust region shrank below its minimum without an acceptable step.
    TrustRegionCollapsed,
    /// The QP subproblem solver failed on the first iteration.
    SolverFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub trust_radius: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub merit: f64,
    pub model: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpSolution {
    /// `T + 1` states starting at `x0`, the rollout of `controls`.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub status: ScpStatus,
    pub iterations: usize,
    /// Last iteration whose step was accepted.
    pub converged_after: usize,
    /// Cost `J` (without penalties) of the returned trajectory.
    pub objective: f64,
    /// Merit (`J` + slack penalty) after every accepted step.
    pub merit_trace: Vec<f64>,
    /// Worst violation of any keep-out, soft or hard state bound.
    pub max_violation: f64,
    pub log: Vec<IterationLog>,
}

impl ScpSolution {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Linearization point supplied by the caller: `T + 1` states and `T`
/// controls. The states need not be dynamically consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

fn rollout<D: Dynamics + ?Sized>(d: &D, x0: &[f64], controls: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(x0.to_vec());
    let mut next = vec![0.0; d.nx()];
    for u in controls {
        d.step(out.last().unwrap(), u, &mut next);
        out.push(next.clone());
    }
    out
}

impl Ocp {
    pub fn cost(&self, states: &[Vec<f64>], controls: &[Vec<f64>]) -> f64 {
        let t = self.horizon;
        let mut j = 0.0;
        for (k, x) in states.iter().enumerate().skip(1) {
            let w = if k == t {
                &self.terminal_weights
            } else {
                &self.stage_weights
            };
            for ((xi, ri), wi) in x.iter().zip(&self.reference).zip(w) {
                j += wi * (xi - ri) * (xi - ri);
            }
        }
        for u in controls {
            for (uj, cj) in u.iter().zip(&self.control_weights) {
                j += cj * uj * uj;
            }
        }
        j
    }

    /// Per-constraint violations of a trajectory, in constraint units.
    fn violations<D: Dynamics + ?Sized>(&self, d: &D, states: &[Vec<f64>]) -> Vec<f64> {
        let (ix, iy) = d.position_indices();
        let mut v = Vec::new();
        for x in &states[1..] {
            for b in self.soft_bounds.iter().chain(&self.hard_bounds) {
                let val = x[b.index];
                v.push((b.lo - val).max(val - b.hi).max(0.0));
            }
        }
        for k in &self.keep_outs {
            let x = &states[k.stage];
            let dist = (x[ix] - k.center[0]).hypot(x[iy] - k.center[1]);
            v.push((k.radius - dist).max(0.0));
        }
        v
    }

    fn merit<D: Dynamics + ?Sized>(
        &self,
        d: &D,
        states: &[Vec<f64>],
        controls: &[Vec<f64>],
        cfg: &ScpConfig,
    ) -> (f64, f64) {
        let viol = self.violations(d, states);
        let penalty: f64 = viol
            .iter()
            .map(|v| cfg.slack_linear * v + cfg.slack_quadratic * v * v)
            .sum();
        let worst = viol.iter().fold(0.0f64, |m, v| m.max(*v));
        (self.cost(states, controls) + penalty, worst)
    }
}

/// Variable layout of the convexified subproblem: per stage `k`, the block
/// `[u_k, x_{k+1}, slacks_k]`.
struct Layout {
    nx: usize,
    nu: usize,
    offsets: Vec<usize>,
    /// Soft rows of stage `k + 1`: `Some(bound)` for a soft state band,
    /// `None` entries refer to keep-outs by index.
    soft: Vec<Vec<SoftRow>>,
    n: usize,
}

#[derive(Clone, Copy)]
enum SoftRow {
    Band(StateBound),
    KeepOut(usize),
}

impl Layout {
    fn new(ocp: &Ocp, nx: usize, nu: usize) -> Layout {
        let t = ocp.horizon;
        let mut soft: Vec<Vec<SoftRow>> = vec![Vec::new(); t];
        for k in 0..t {
            for b in &ocp.soft_bounds {
                soft[k].push(SoftRow::Band(*b));
            }
        }
        for (i, ko) in ocp.keep_outs.iter().enumerate() {
            soft[ko.stage - 1].push(SoftRow::KeepOut(i));
        }
        let mut offsets = Vec::with_capacity(t + 1);
        let mut off = 0;
        for s in &soft {
            offsets.push(off);
            off += nu + nx + s.len();
        }
        offsets.push(off);
        Layout {
            nx,
            nu,
            offsets,
            soft,
            n: off,
        }
    }

    fn u(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Offset of `x_{k}` for `k >= 1`.
    fn x(&self, k: usize) -> usize {
        self.offsets[k - 1] + self.nu
    }

    fn slack(&self, k: usize) -> usize {
        self.offsets[k] + self.nu + self.nx
    }
}

struct Subproblem {
    qp: QpProblem,
}

#[allow(clippy::too_many_arguments)]
fn build_subproblem<D: Dynamics + ?Sized>(
    d: &D,
    ocp: &Ocp,
    lay: &Layout,
    lin_states: &[Vec<f64>],
    lin_controls: &[Vec<f64>],
    trust: f64,
    half_range: &[f64],
    cfg: &ScpConfig,
) -> Subproblem {
    let (nx, nu, t) = (lay.nx, lay.nu, ocp.horizon);
    let (ix, iy) = d.position_indices();
    let mut p_t = Vec::new();
    let mut q = vec![0.0; lay.n];
    for k in 0..t {
        for j in 0..nu {
            let c = ocp.control_weights[j];
            if c != 0.0 {
                p_t.push((lay.u(k) + j, lay.u(k) + j, 2.0 * c));
            }
        }
        let w = if k + 1 == t {
            &ocp.terminal_weights
        } else {
            &ocp.stage_weights
        };
        for i in 0..nx {
            if w[i] != 0.0 {
                let col = lay.x(k + 1) + i;
                p_t.push((col, col, 2.0 * w[i]));
                q[col] -= 2.0 * w[i] * ocp.reference[i];
            }
        }
        for s in 0..lay.soft[k].len() {
            let col = lay.slack(k) + s;
            if cfg.slack_quadratic > 0.0 {
                p_t.push((col, col, 2.0 * cfg.slack_quadratic));
            }
            q[col] += cfg.slack_linear;
        }
    }

    let mut a_t = Vec::new();
    let mut l = Vec::new();
    let mut u = Vec::new();
    let mut row = 0;
    let mut jac_a = vec![0.0; nx * nx];
    let mut jac_b = vec![0.0; nx * nu];
    let mut fx = vec![0.0; nx];
    for k in 0..t {
        let (xb, ub) = (&lin_states[k], &lin_controls[k]);
        d.jacobians(xb, ub, &mut jac_a, &mut jac_b);
        d.step(xb, ub, &mut fx);
        // x_{k+1} - A x_k - B u_k = f(x̄, ū) - A x̄ - B ū
        for i in 0..nx {
            let mut rhs = fx[i];
            for j in 0..nx {
                rhs -= jac_a[i * nx + j] * xb[j];
            }
            for j in 0..nu {
                rhs -= jac_b[i * nu + j] * ub[j];
            }
            a_t.push((row, lay.x(k + 1) + i, 1.0));
            for j in 0..nx {
                let v = jac_a[i * nx + j];
                if v != 0.0 {
                    if k == 0 {
                        rhs += v * ocp.x0[j];
                    } else {
                        a_t.push((row, lay.x(k) + j, -v));
                    }
                }
            }
            for j in 0..nu {
                let v = jac_b[i * nu + j];
                if v != 0.0 {
                    a_t.push((row, lay.u(k) + j, -v));
                }
            }
            l.push(rhs);
            u.push(rhs);
            row += 1;
        }
        // control limits intersected with the trust region
        for j in 0..nu {
            let c = ub[j];
            let mut lo = ocp.control_lo[j].max(c - trust * half_range[j]);
            let mut hi = ocp.control_hi[j].min(c + trust * half_range[j]);
            if lo > hi {
                let v = c.clamp(ocp.control_lo[j], ocp.control_hi[j]);
                lo = v;
                hi = v;
            }
            a_t.push((row, lay.u(k) + j, 1.0));
            l.push(lo);
            u.push(hi);
            row += 1;
        }
        for b in &ocp.hard_bounds {
            a_t.push((row, lay.x(k + 1) + b.index, 1.0));
            l.push(b.lo);
            u.push(b.hi);
            row += 1;
        }
        for (s, soft) in lay.soft[k].iter().enumerate() {
            let sc = lay.slack(k) + s;
            match *soft {
                SoftRow::Band(b) => {
                    let col = lay.x(k + 1) + b.index;
                    a_t.push((row, col, 1.0));
                    a_t.push((row, sc, 1.0));
                    l.push(b.lo);
                    u.push(f64::INFINITY);
                    row += 1;
                    a_t.push((row, col, 1.0));
                    a_t.push((row, sc, -1.0));
                    l.push(f64::NEG_INFINITY);
                    u.push(b.hi);
                    row += 1;
                }
                SoftRow::KeepOut(i) => {
                    let ko = ocp.keep_outs[i];
                    let n = half_plane_normal(&lin_states[k + 1], ko.center, ix, iy, &ocp.x0);
                    a_t.push((row, lay.x(k + 1) + ix, n[0]));
                    a_t.push((row, lay.x(k + 1) + iy, n[1]));
                    a_t.push((row, sc, 1.0));
                    l.push(ko.radius + cfg.keep_out_buffer + n[0] * ko.center[0] + n[1] * ko.center[1]);
                    u.push(f64::INFINITY);
                    row += 1;
                }
            }
            a_t.push((row, sc, 1.0));
            l.push(0.0);
            u.push(f64::INFINITY);
            row += 1;
        }
    }
    Subproblem {
        qp: QpProblem {
            p: SparseMatrix::from_triplets(lay.n, lay.n, &p_t),
            q,
            a: SparseMatrix::from_triplets(row, lay.n, &a_t),
            l,
            u,
        },
    }
}

/// Unit normal of the supporting half-plane of a keep-out disc at the
/// linearization point.
fn half_plane_normal(x: &[f64], c: Point, ix: usize, iy: usize, x0: &[f64]) -> Point {
    let d = [x[ix] - c[0], x[iy] - c[1]];
    let n = d[0].hypot(d[1]);
    if n > 1e-9 {
        return [d[0] / n, d[1] / n];
    }
    let d = [x0[ix] - c[0], x0[iy] - c[1]];
    let n = d[0].hypot(d[1]);
    if n > 1e-9 {
        [d[0] / n, d[1] / n]
    } else {
        [-1.0, 0.0]
    }
}

/// Runs the SCP loop from `guess`.
pub fn scp_solve<D: Dynamics + ?Sized>(
    d: &D,
    ocp: &Ocp,
    guess: &InitialGuess,
    cfg: &ScpConfig,
) -> ScpSolution {
    let (nx, nu, t) = (d.nx(), d.nu(), ocp.horizon);
    assert!(t >= 1, "horizon must be at least 1");
    assert_eq!(guess.states.len(), t + 1);
    assert_eq!(guess.controls.len(), t);
    let lay = Layout::new(ocp, nx, nu);
    let half_range: Vec<f64> = ocp
        .control_lo
        .iter()
        .zip(&ocp.control_hi)
        .map(|(lo, hi)| 0.5 * (hi - lo))
        .collect();

    let clamp_controls = |c: &[Vec<f64>]| -> Vec<Vec<f64>> {
        c.iter()
            .map(|u| {
                u.iter()
                    .enumerate()
                    .map(|(j, v)| v.clamp(ocp.control_lo[j], ocp.control_hi[j]))
                    .collect()
            })
            .collect()
    };
    let mut lin_states = guess.states.clone();
    lin_states[0] = ocp.x0.clone();
    let mut lin_controls = clamp_controls(&guess.controls);
    // incumbent: (states, controls, merit, worst violation)
    let mut incumbent: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64, f64)> = None;
    let mut trust = cfg.trust_radius.min(cfg.trust_max);
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut log = Vec::new();
    let mut merit_trace = Vec::new();
    let mut converged_after = 0;
    let mut status = ScpStatus::MaxIterations;
    let mut iterations = 0;

    for it in 1..=cfg.max_iterations {
        if trust < cfg.trust_min {
            status = ScpStatus::TrustRegionCollapsed;
            break;
        }
        iterations = it;
        let sub = build_subproblem(d, ocp, &lay, &lin_states, &lin_controls, trust, &half_range, cfg);
        let sol = match &warm {
            Some((x, y)) if x.len() == sub.qp.q.len() && y.len() == sub.qp.l.len() => {
                qp::solve_warm(&sub.qp, &cfg.qp, Some((x, y)))
            }
            _ => qp::solve(&sub.qp, &cfg.qp),
        };
        let sol = match sol {
            Ok(s) => s,
            Err(_) => {
                log.push(IterationLog {
                    iteration: it,
                    trust_radius: trust,
                    qp_status: QpStatus::MaxIterations,
                    qp_iterations: 0,
                    merit: f64::NAN,
                    model: f64::NAN,
                    accepted: false,
                });
                if incumbent.is_none() {
                    status = ScpStatus::SolverFailure;
                    break;
                }
                trust *= cfg.shrink;
                continue;
            }
        };
        if sol.status != QpStatus::Solved {
            log.push(IterationLog {
                iteration: it,
                trust_radius: trust,
                qp_status: sol.status,
                qp_iterations: sol.iterations,
                merit: f64::NAN,
                model: f64::NAN,
                accepted: false,
            });
            if incumbent.is_none() {
                status = ScpStatus::SolverFailure;
                break;
            }
            warm = None;
            trust *= cfg.shrink;
            continue;
        }
        let controls: Vec<Vec<f64>> = (0..t)
            .map(|k| sol.x[lay.u(k)..lay.u(k) + nu].to_vec())
            .collect();
        let controls = clamp_controls(&controls);
        let model_states: Vec<Vec<f64>> = std::iter::once(ocp.x0.clone())
            .chain((1..=t).map(|k| sol.x[lay.x(k)..lay.x(k) + nx].to_vec()))
            .collect();
        let mut slack_penalty = 0.0;
        for k in 0..t {
            for s in 0..lay.soft[k].len() {
                let v = sol.x[lay.slack(k) + s].max(0.0);
                slack_penalty += cfg.slack_linear * v + cfg.slack_quadratic * v * v;
            }
        }
        let model = ocp.cost(&model_states, &controls) + slack_penalty;
        let states = rollout(d, &ocp.x0, &controls);
        let (merit, worst) = ocp.merit(d, &states, &controls, cfg);
        warm = Some((sol.x.clone(), sol.y.clone()));

        let mut entry = IterationLog {
            iteration: it,
            trust_radius: trust,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            merit,
            model,
            accepted: false,
        };
        let Some((_, inc_controls, inc_merit, _)) = &incumbent else {
            entry.accepted = true;
            log.push(entry);
            merit_trace.push(merit);
            converged_after = it;
            lin_states = states.clone();
            lin_controls = controls.clone();
            incumbent = Some((states, controls, merit, worst));
            continue;
        };
        let inc_merit = *inc_merit;
        let scale = cfg.merit_tolerance * (1.0 + inc_merit.abs());
        let predicted = inc_merit - model;
        if predicted <= scale {
            log.push(entry);
            status = ScpStatus::Converged;
            break;
        }
        let actual = inc_merit - merit;
        let ratio = actual / predicted;
        if !(ratio >= cfg.accept_ratio) {
            log.push(entry);
            trust *= cfg.shrink;
            continue;
        }
        let step = controls
            .iter()
            .zip(inc_controls)
            .flat_map(|(a, b)| a.iter().zip(b).zip(&half_range).map(|((x, y), r)| (x - y).abs() / r))
            .fold(0.0f64, f64::max);
        if ratio > cfg.grow_ratio {
            trust = (trust * cfg.grow).min(cfg.trust_max);
        }
        entry.accepted = true;
        log.push(entry);
        merit_trace.push(merit);
        converged_after = it;
        lin_states = states.clone();
        lin_controls = controls.clone();
        incumbent = Some((states, controls, merit, worst));
        if step < cfg.step_tolerance || actual.abs() <= scale {
            status = ScpStatus::Converged;
            break;
        }
    }

    let (states, controls, _, worst) = incumbent.unwrap_or_else(|| {
        let states = rollout(d, &ocp.x0, &lin_controls);
        let (m, w) = ocp.merit(d, &states, &lin_controls, cfg);
        (states, lin_controls.clone(), m, w)
    });
    ScpSolution {
        objective: ocp.cost(&states, &controls),
        states,
        controls,
        status,
        iterations,
        converged_after,
        merit_trace,
        max_violation: worst,
        log,
    }
}
