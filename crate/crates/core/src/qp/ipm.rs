//! Primal-dual interior point method (Mehrotra predictor-corrector).
//!
//! Equality rows stay in the Newton system, which is quasi-definite after a
//! small regularization and is factored as banded `LDLᵀ`. Each equality row
//! is ordered directly after the last variable it touches so stage-wise MPC
//! problems keep a narrow band.

use super::admm::{objective, QpProblem, QpSettings, QpSolution, QpStatus};
use super::banded::{BandedLdl, BandedMatrix};
use crate::Result;

const REG_PRIMAL: f64 = 1e-9;
const REG_DUAL: f64 = 1e-9;
const REFINE_STEPS: usize = 3;
const STEP_FRACTION: f64 = 0.99;

/// One side of an inequality row: `sign * a_r x <= h`.
#[derive(Clone, Copy)]
struct Side {
    row: usize,
    sign: f64,
    h: f64,
}

struct Layout {
    n: usize,
    eq: Vec<usize>,
    sides: Vec<Side>,
    /// Position of each variable, then each equality row, in the band.
    pos_x: Vec<usize>,
    pos_y: Vec<usize>,
    bw: usize,
}

fn layout(prob: &QpProblem) -> Layout {
    let n = prob.q.len();
    let mut eq = Vec::new();
    let mut sides = Vec::new();
    for (r, (&l, &u)) in prob.l.iter().zip(&prob.u).enumerate() {
        if prob.a.row(r).0.is_empty() {
            continue;
        }
        if l.is_finite() && (u - l).abs() <= 1e-12 * (1.0 + l.abs()) {
            eq.push(r);
            continue;
        }
        if u.is_finite() {
            sides.push(Side { row: r, sign: 1.0, h: u });
        }
        if l.is_finite() {
            sides.push(Side { row: r, sign: -1.0, h: -l });
        }
    }
    let mut keys: Vec<(usize, usize, usize)> = (0..n).map(|j| (j, 0, j)).collect();
    for (k, &r) in eq.iter().enumerate() {
        let last = prob.a.row(r).0.iter().copied().max().unwrap_or(0);
        keys.push((last, 1, k));
    }
    keys.sort_unstable();
    let mut pos_x = vec![0; n];
    let mut pos_y = vec![0; eq.len()];
    for (p, &(_, kind, i)) in keys.iter().enumerate() {
        if kind == 0 {
            pos_x[i] = p;
        } else {
            pos_y[i] = p;
        }
    }
    let mut bw = 0;
    for i in 0..n {
        for &j in prob.p.row(i).0 {
            bw = bw.max(pos_x[i].abs_diff(pos_x[j]));
        }
    }
    for side in &sides {
        let cols = prob.a.row(side.row).0;
        if let (Some(lo), Some(hi)) = (cols.iter().min(), cols.iter().max()) {
            bw = bw.max(pos_x[*hi] - pos_x[*lo]);
        }
    }
    for (k, &r) in eq.iter().enumerate() {
        for &j in prob.a.row(r).0 {
            bw = bw.max(pos_y[k].abs_diff(pos_x[j]));
        }
    }
    Layout {
        n,
        eq,
        sides,
        pos_x,
        pos_y,
        bw,
    }
}

struct Newton<'a> {
    prob: &'a QpProblem,
    lay: &'a Layout,
    /// Barrier weight per row of `A` (sum over its sides).
    w_row: Vec<f64>,
    ldl: BandedLdl,
}

impl<'a> Newton<'a> {
    fn new(prob: &'a QpProblem, lay: &'a Layout, w_row: Vec<f64>) -> Result<Self> {
        let dim = lay.n + lay.eq.len();
        let mut k = BandedMatrix::zeros(dim, lay.bw);
        for i in 0..lay.n {
            let (cs, vs) = prob.p.row(i);
            for (&j, &v) in cs.iter().zip(vs) {
                if j <= i {
                    k.add(lay.pos_x[i], lay.pos_x[j], v);
                }
            }
            k.add(lay.pos_x[i], lay.pos_x[i], REG_PRIMAL);
        }
        for (r, &w) in w_row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (cs, vs) = prob.a.row(r);
            for (a, (&i, &vi)) in cs.iter().zip(vs).enumerate() {
                for (&j, &vj) in cs[..=a].iter().zip(vs) {
                    k.add(lay.pos_x[i], lay.pos_x[j], w * vi * vj);
                }
            }
        }
        for (e, &r) in lay.eq.iter().enumerate() {
            let (cs, vs) = prob.a.row(r);
            for (&j, &v) in cs.iter().zip(vs) {
                k.add(lay.pos_y[e], lay.pos_x[j], v);
            }
            k.add(lay.pos_y[e], lay.pos_y[e], -REG_DUAL);
        }
        Ok(Newton {
            prob,
            lay,
            w_row,
            ldl: k.factor_ldl()?,
        })
    }

    /// Applies the unregularized Newton matrix.
    fn apply(&self, dx: &[f64], dy: &[f64], ox: &mut [f64], oy: &mut [f64]) {
        let prob = self.prob;
        prob.p.mul_vec(dx, ox);
        for (r, &w) in self.w_row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (cs, vs) = prob.a.row(r);
            let ad: f64 = cs.iter().zip(vs).map(|(&j, v)| v * dx[j]).sum();
            for (&j, v) in cs.iter().zip(vs) {
                ox[j] += w * v * ad;
            }
        }
        for (e, &r) in self.lay.eq.iter().enumerate() {
            let (cs, vs) = prob.a.row(r);
            let mut ad = 0.0;
            for (&j, &v) in cs.iter().zip(vs) {
                ad += v * dx[j];
                ox[j] += v * dy[e];
            }
            oy[e] = ad;
        }
    }

    fn solve(&self, rx: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lay = self.lay;
        let (n, me) = (lay.n, lay.eq.len());
        let mut buf = vec![0.0; n + me];
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; me];
        let mut ox = vec![0.0; n];
        let mut oy = vec![0.0; me];
        for step in 0..=REFINE_STEPS {
            // residual of the current estimate against the exact system
            if step == 0 {
                ox.iter_mut().for_each(|v| *v = 0.0);
                oy.iter_mut().for_each(|v| *v = 0.0);
            } else {
                self.apply(&dx, &dy, &mut ox, &mut oy);
            }
            for j in 0..n {
                buf[lay.pos_x[j]] = rx[j] - ox[j];
            }
            for e in 0..me {
                buf[lay.pos_y[e]] = ry[e] - oy[e];
            }
            self.ldl.solve(&mut buf);
            for j in 0..n {
                dx[j] += buf[lay.pos_x[j]];
            }
            for e in 0..me {
                dy[e] += buf[lay.pos_y[e]];
            }
        }
        (dx, dy)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = 1.0f64;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

pub(crate) fn solve(prob: &QpProblem, set: &QpSettings) -> Result<QpSolution> {
    let lay = layout(prob);
    let n = lay.n;
    let m = prob.l.len();
    let me = lay.eq.len();
    let mi = lay.sides.len();

    let row_dot = |r: usize, x: &[f64]| -> f64 {
        let (cs, vs) = prob.a.row(r);
        cs.iter().zip(vs).map(|(&j, v)| v * x[j]).sum()
    };
    let b: Vec<f64> = lay.eq.iter().map(|&r| prob.l[r]).collect();

    // start: least-squares fit with unit barrier weights
    let (mut x, mut y, mut s, mut z) = {
        let mut w_row = vec![0.0; m];
        for side in &lay.sides {
            w_row[side.row] += 1.0;
        }
        let newton = Newton::new(prob, &lay, w_row)?;
        let mut rx: Vec<f64> = prob.q.iter().map(|v| -v).collect();
        for side in &lay.sides {
            let (cs, vs) = prob.a.row(side.row);
            for (&j, v) in cs.iter().zip(vs) {
                rx[j] += side.sign * v * side.h;
            }
        }
        let (x, y) = newton.solve(&rx, &b);
        let mut s: Vec<f64> = lay
            .sides
            .iter()
            .map(|sd| sd.h - sd.sign * row_dot(sd.row, &x))
            .collect();
        let mut z: Vec<f64> = s.iter().map(|v| -v).collect();
        for v in [&mut s, &mut z] {
            let lo = v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
            let shift = (1.0 - lo).max(0.0);
            v.iter_mut().for_each(|e| *e += shift);
        }
        (x, y, s, z)
    };

    let q_norm = norm_inf(&prob.q);
    let mut gx = vec![0.0; mi];
    let mut px = vec![0.0; n];
    let mut rd = vec![0.0; n];
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let max_iter = set.ipm_max_iter;
    for it in 0..=max_iter {
        iterations = it;
        for (k, sd) in lay.sides.iter().enumerate() {
            gx[k] = sd.sign * row_dot(sd.row, &x);
        }
        prob.p.mul_vec(&x, &mut px);
        rd.copy_from_slice(&px);
        let mut aty = vec![0.0; n];
        for (e, &r) in lay.eq.iter().enumerate() {
            let (cs, vs) = prob.a.row(r);
            for (&j, v) in cs.iter().zip(vs) {
                aty[j] += v * y[e];
            }
        }
        for (k, sd) in lay.sides.iter().enumerate() {
            let (cs, vs) = prob.a.row(sd.row);
            for (&j, v) in cs.iter().zip(vs) {
                aty[j] += sd.sign * v * z[k];
            }
        }
        for j in 0..n {
            rd[j] += prob.q[j] + aty[j];
        }
        let re: Vec<f64> = lay
            .eq
            .iter()
            .zip(&b)
            .map(|(&r, bi)| row_dot(r, &x) - bi)
            .collect();
        let ri: Vec<f64> = (0..mi).map(|k| gx[k] + s[k] - lay.sides[k].h).collect();
        let gap: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };

        let prim = norm_inf(&re).max(
            gx.iter()
                .zip(&lay.sides)
                .fold(0.0f64, |m, (g, sd)| m.max(g - sd.h)),
        );
        let prim_scale = norm_inf(&gx)
            .max(norm_inf(&b))
            .max(lay.sides.iter().fold(0.0f64, |m, sd| m.max(sd.h.abs())));
        let dual = norm_inf(&rd);
        let dual_scale = norm_inf(&px).max(q_norm).max(norm_inf(&aty));
        let obj = objective(prob, &x);
        let ok = |r: f64, sc: f64| r <= set.eps_abs + set.eps_rel * sc;
        if ok(prim, prim_scale)
            && ok(norm_inf(&ri), prim_scale)
            && ok(dual, dual_scale)
            && ok(gap, obj.abs().max(1.0))
        {
            status = QpStatus::Solved;
            break;
        }
        if it == max_iter || !(mu.is_finite() && obj.is_finite()) {
            break;
        }

        let mut w_row = vec![0.0; m];
        for (k, sd) in lay.sides.iter().enumerate() {
            w_row[sd.row] += z[k] / s[k];
        }
        let newton = Newton::new(prob, &lay, w_row)?;
        let direction = |rc: &[f64]| {
            // t = S⁻¹(Z rᵢ − r_c)
            let t: Vec<f64> = (0..mi).map(|k| (z[k] * ri[k] - rc[k]) / s[k]).collect();
            let mut rx: Vec<f64> = rd.iter().map(|v| -v).collect();
            for (k, sd) in lay.sides.iter().enumerate() {
                let (cs, vs) = prob.a.row(sd.row);
                for (&j, v) in cs.iter().zip(vs) {
                    rx[j] -= sd.sign * v * t[k];
                }
            }
            let ry: Vec<f64> = re.iter().map(|v| -v).collect();
            let (dx, dy) = newton.solve(&rx, &ry);
            let mut ds = vec![0.0; mi];
            let mut dz = vec![0.0; mi];
            for (k, sd) in lay.sides.iter().enumerate() {
                let gdx = sd.sign * row_dot(sd.row, &dx);
                ds[k] = -ri[k] - gdx;
                dz[k] = z[k] / s[k] * gdx + t[k];
            }
            (dx, dy, ds, dz)
        };
        let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let (_, _, ds_a, dz_a) = direction(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let gap_aff: f64 = (0..mi)
            .map(|k| (s[k] + a_aff * ds_a[k]) * (z[k] + a_aff * dz_a[k]))
            .sum();
        let sigma = if gap > 0.0 { (gap_aff / gap).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let rc: Vec<f64> = (0..mi)
            .map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu)
            .collect();
        let (dx, dy, ds, dz) = direction(&rc);
        let alpha = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for e in 0..me {
            y[e] += alpha * dy[e];
        }
        for k in 0..mi {
            s[k] += alpha * ds[k];
            z[k] += alpha * dz[k];
        }
    }

    // multipliers per row of A
    let mut y_full = vec![0.0; m];
    for (e, &r) in lay.eq.iter().enumerate() {
        y_full[r] = y[e];
    }
    for (k, sd) in lay.sides.iter().enumerate() {
        y_full[sd.row] += sd.sign * z[k];
    }
    let mut ax = vec![0.0; m];
    prob.a.mul_vec(&x, &mut ax);
    let prim_res = (0..m).fold(0.0f64, |acc, r| {
        acc.max(prob.l[r] - ax[r]).max(ax[r] - prob.u[r])
    });
    prob.p.mul_vec(&x, &mut px);
    let mut aty = vec![0.0; n];
    prob.a.mul_t_vec(&y_full, &mut aty);
    let dual_res = (0..n).fold(0.0f64, |acc, j| acc.max((px[j] + prob.q[j] + aty[j]).abs()));
    Ok(QpSolution {
        objective: objective(prob, &x),
        x,
        y: y_full,
        status,
        iterations,
        prim_res,
        dual_res,
        polished: false,
    })
}
