use serde::{Deserialize, Serialize};

use super::banded::{BandedCholesky, BandedMatrix};
use super::sparse::SparseMatrix;
use crate::Result;

/// `min ½xᵀPx + qᵀx  s.t.  l <= Ax <= u`. `P` must be symmetric PSD and
/// stored in full (both triangles). Infinite bounds are allowed.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a: SparseMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    /// Operator splitting with active-set polish.
    Admm,
    /// Primal-dual interior point; ignores warm starts.
    InteriorPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub method: QpMethod,
    pub ipm_max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Absolute and relative residual tolerance for a solved status.
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Residual level at which an active-set polish is first attempted.
    pub eps_polish: f64,
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub check_interval: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            method: QpMethod::Admm,
            ipm_max_iter: 100,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_polish: 1e-4,
            eps_prim_inf: 1e-7,
            max_iter: 40_000,
            scaling_iters: 10,
            adaptive_rho: true,
            check_interval: 25,
            polish: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constraint multipliers; positive when the upper bound is active.
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub polished: bool,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;

pub fn solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_warm(prob, settings, None)
}

/// Solves `prob`, optionally starting from a previous primal/dual pair.
pub fn solve_warm(
    prob: &QpProblem,
    settings: &QpSettings,
    warm: Option<(&[f64], &[f64])>,
) -> Result<QpSolution> {
    if settings.method == QpMethod::InteriorPoint {
        return super::ipm::solve(prob, settings);
    }
    let mut w = Workspace::new(prob, settings)?;
    if let Some((x, y)) = warm {
        w.warm_start(x, y);
    }
    w.run()
}

/// Ruiz-equilibrated copy of the problem plus the scaling that maps back.
struct Scaled {
    p: SparseMatrix,
    q: Vec<f64>,
    a: SparseMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn scale_problem(prob: &QpProblem, iters: usize) -> Scaled {
    let n = prob.q.len();
    let m = prob.l.len();
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut q = prob.q.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let clip = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut col = vec![0.0f64; n];
        for r in 0..n {
            let (cs, vs) = p.row(r);
            for (&j, v) in cs.iter().zip(vs) {
                col[j] = col[j].max(v.abs());
            }
        }
        let mut row = vec![0.0f64; m];
        for r in 0..m {
            let (cs, vs) = a.row(r);
            for (&j, v) in cs.iter().zip(vs) {
                col[j] = col[j].max(v.abs());
                row[r] = row[r].max(v.abs());
            }
        }
        let dd: Vec<f64> = col.iter().map(|&v| 1.0 / clip(v).sqrt()).collect();
        let de: Vec<f64> = row.iter().map(|&v| 1.0 / clip(v).sqrt()).collect();
        for r in 0..n {
            let (cs, vs) = p.row_mut(r);
            for (&j, v) in cs.iter().zip(vs.iter_mut()) {
                *v *= dd[r] * dd[j];
            }
        }
        for r in 0..m {
            let (cs, vs) = a.row_mut(r);
            for (&j, v) in cs.iter().zip(vs.iter_mut()) {
                *v *= de[r] * dd[j];
            }
        }
        for j in 0..n {
            q[j] *= dd[j];
            d[j] *= dd[j];
        }
        for r in 0..m {
            e[r] *= de[r];
        }
        // cost scaling
        let mut pcol = vec![0.0f64; n];
        for r in 0..n {
            let (cs, vs) = p.row(r);
            for (&j, v) in cs.iter().zip(vs) {
                pcol[j] = pcol[j].max(v.abs());
            }
        }
        let mean_p = if n > 0 { pcol.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let q_norm = inf_norm(&q);
        let gamma = 1.0 / clip(mean_p.max(q_norm));
        for r in 0..n {
            let (_, vs) = p.row_mut(r);
            vs.iter_mut().for_each(|v| *v *= gamma);
        }
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let l = prob.l.iter().zip(&e).map(|(b, s)| b * s).collect();
    let u = prob.u.iter().zip(&e).map(|(b, s)| b * s).collect();
    Scaled {
        p,
        q,
        a,
        l,
        u,
        d,
        e,
        c,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    Free,
    Equality,
    Inequality,
}

struct Workspace<'a> {
    prob: &'a QpProblem,
    set: &'a QpSettings,
    s: Scaled,
    kinds: Vec<RowKind>,
    rho: f64,
    rho_vec: Vec<f64>,
    bw: usize,
    factor: BandedCholesky,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

struct Residuals {
    prim: f64,
    dual: f64,
    prim_scale: f64,
    dual_scale: f64,
    /// The same quantities in the scaled space, for the rho update.
    prim_s: f64,
    dual_s: f64,
    prim_scale_s: f64,
    dual_scale_s: f64,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a QpProblem, set: &'a QpSettings) -> Result<Self> {
        let n = prob.q.len();
        let m = prob.l.len();
        assert_eq!(prob.p.nrows(), n);
        assert_eq!(prob.p.ncols(), n);
        assert_eq!(prob.a.ncols(), n);
        assert_eq!(prob.a.nrows(), m);
        assert_eq!(prob.u.len(), m);
        let s = scale_problem(prob, set.scaling_iters);
        let kinds: Vec<RowKind> = prob
            .l
            .iter()
            .zip(&prob.u)
            .map(|(&l, &u)| {
                if l == f64::NEG_INFINITY && u == f64::INFINITY {
                    RowKind::Free
                } else if (u - l).abs() < 1e-12 * (1.0 + l.abs()) {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();
        let bw = s.p.bandwidth().max(s.a.row_spread());
        let rho = set.rho;
        let rho_vec = rho_vector(&kinds, rho);
        let factor = factor_kkt(&s.p, &s.a, set.sigma, &rho_vec, bw)?;
        Ok(Workspace {
            prob,
            set,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
            s,
            kinds,
            rho,
            rho_vec,
            bw,
            factor,
        })
    }

    fn warm_start(&mut self, x: &[f64], y: &[f64]) {
        if x.len() == self.x.len() {
            for (j, v) in x.iter().enumerate() {
                self.x[j] = v / self.s.d[j];
            }
        }
        if y.len() == self.y.len() {
            for (r, v) in y.iter().enumerate() {
                self.y[r] = v * self.s.c / self.s.e[r];
            }
        }
        let mut ax = vec![0.0; self.z.len()];
        self.s.a.mul_vec(&self.x, &mut ax);
        for (r, z) in self.z.iter_mut().enumerate() {
            *z = ax[r].clamp(self.s.l[r], self.s.u[r]);
        }
    }

    fn run(mut self) -> Result<QpSolution> {
        let n = self.x.len();
        let m = self.z.len();
        let set = self.set;
        let mut rhs = vec![0.0; n];
        let mut xt = vec![0.0; n];
        let mut zt = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        let mut y_prev = vec![0.0; m];
        let mut polish_level = set.eps_polish;
        let mut iter = 0;
        while iter < set.max_iter {
            iter += 1;
            y_prev.copy_from_slice(&self.y);
            // x-update through the reduced KKT system
            for r in 0..m {
                tmp[r] = self.rho_vec[r] * self.z[r] - self.y[r];
            }
            self.s.a.mul_t_vec(&tmp, &mut rhs);
            for j in 0..n {
                rhs[j] += set.sigma * self.x[j] - self.s.q[j];
            }
            xt.copy_from_slice(&rhs);
            self.factor.solve(&mut xt);
            self.s.a.mul_vec(&xt, &mut zt);
            for j in 0..n {
                self.x[j] = set.alpha * xt[j] + (1.0 - set.alpha) * self.x[j];
            }
            for r in 0..m {
                let zr = set.alpha * zt[r] + (1.0 - set.alpha) * self.z[r];
                let znew = (zr + self.y[r] / self.rho_vec[r]).clamp(self.s.l[r], self.s.u[r]);
                self.y[r] += self.rho_vec[r] * (zr - znew);
                self.z[r] = znew;
            }

            if iter % set.check_interval != 0 && iter != set.max_iter {
                continue;
            }
            let res = self.residuals(&self.x, &self.z, &self.y);
            let done = |prim: f64, dual: f64, ps: f64, ds: f64, eps_abs: f64, eps_rel: f64| {
                prim <= eps_abs + eps_rel * ps && dual <= eps_abs + eps_rel * ds
            };
            if done(res.prim, res.dual, res.prim_scale, res.dual_scale, set.eps_abs, set.eps_rel) {
                let mut sol = self.finish(QpStatus::Solved, iter, &res);
                if set.polish {
                    if let Some(p) = self.polish() {
                        if p.prim_res <= sol.prim_res.max(set.eps_abs)
                            && p.dual_res <= sol.dual_res.max(set.eps_abs)
                        {
                            sol = QpSolution { iterations: iter, ..p };
                        }
                    }
                }
                return Ok(sol);
            }
            if set.polish
                && done(res.prim, res.dual, res.prim_scale, res.dual_scale, polish_level, polish_level)
            {
                polish_level *= 0.1;
                if let Some(p) = self.polish() {
                    if done(p.prim_res, p.dual_res, res.prim_scale, res.dual_scale, set.eps_abs, set.eps_rel)
                    {
                        return Ok(QpSolution {
                            iterations: iter,
                            ..p
                        });
                    }
                }
            }
            if self.primal_infeasible(&y_prev) {
                return Ok(self.finish(QpStatus::PrimalInfeasible, iter, &res));
            }
            if set.adaptive_rho {
                self.update_rho(&res)?;
            }
        }
        let res = self.residuals(&self.x, &self.z, &self.y);
        Ok(self.finish(QpStatus::MaxIterations, iter, &res))
    }

    fn residuals(&self, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
        let n = x.len();
        let m = z.len();
        let s = &self.s;
        let mut ax = vec![0.0; m];
        s.a.mul_vec(x, &mut ax);
        let mut px = vec![0.0; n];
        s.p.mul_vec(x, &mut px);
        let mut aty = vec![0.0; n];
        s.a.mul_t_vec(y, &mut aty);
        let mut prim = 0.0f64;
        let mut prim_scale = 0.0f64;
        let mut prim_s = 0.0f64;
        let mut prim_scale_s = 0.0f64;
        for r in 0..m {
            let ei = 1.0 / s.e[r];
            prim = prim.max(((ax[r] - z[r]) * ei).abs());
            prim_scale = prim_scale.max((ax[r] * ei).abs()).max((z[r] * ei).abs());
            prim_s = prim_s.max((ax[r] - z[r]).abs());
            prim_scale_s = prim_scale_s.max(ax[r].abs()).max(z[r].abs());
        }
        let mut dual = 0.0f64;
        let mut dual_scale = 0.0f64;
        let mut dual_s = 0.0f64;
        let mut dual_scale_s = 0.0f64;
        let ci = 1.0 / s.c;
        for j in 0..n {
            let di = ci / s.d[j];
            dual = dual.max(((px[j] + s.q[j] + aty[j]) * di).abs());
            dual_scale = dual_scale
                .max((px[j] * di).abs())
                .max((aty[j] * di).abs())
                .max((s.q[j] * di).abs());
            dual_s = dual_s.max((px[j] + s.q[j] + aty[j]).abs());
            dual_scale_s = dual_scale_s.max(px[j].abs()).max(aty[j].abs()).max(s.q[j].abs());
        }
        Residuals {
            prim,
            dual,
            prim_scale,
            dual_scale,
            prim_s,
            dual_s,
            prim_scale_s,
            dual_scale_s,
        }
    }

    fn update_rho(&mut self, res: &Residuals) -> Result<()> {
        let num = res.prim_s / res.prim_scale_s.max(1e-30);
        let den = res.dual_s / res.dual_scale_s.max(1e-30);
        if !(num > 0.0 && den > 0.0) {
            return Ok(());
        }
        let new_rho = (self.rho * (num / den).sqrt()).clamp(RHO_MIN, RHO_MAX);
        if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
            self.rho = new_rho;
            self.rho_vec = rho_vector(&self.kinds, new_rho);
            self.factor = factor_kkt(&self.s.p, &self.s.a, self.set.sigma, &self.rho_vec, self.bw)?;
        }
        Ok(())
    }

    fn primal_infeasible(&self, y_prev: &[f64]) -> bool {
        let s = &self.s;
        let m = self.y.len();
        // certificate in unscaled multipliers: dy = E (y - y_prev)
        let dy: Vec<f64> = (0..m).map(|r| s.e[r] * (self.y[r] - y_prev[r])).collect();
        let norm = inf_norm(&dy);
        if norm < 1e-30 {
            return false;
        }
        let eps = self.set.eps_prim_inf * norm;
        let mut support = 0.0;
        for r in 0..m {
            let (l, u) = (self.prob.l[r], self.prob.u[r]);
            if dy[r] > 0.0 {
                if u == f64::INFINITY {
                    if dy[r] > eps {
                        return false;
                    }
                } else {
                    support += u * dy[r];
                }
            } else if dy[r] < 0.0 {
                if l == f64::NEG_INFINITY {
                    if -dy[r] > eps {
                        return false;
                    }
                } else {
                    support += l * dy[r];
                }
            }
        }
        if support >= -eps {
            return false;
        }
        let mut aty = vec![0.0; self.x.len()];
        self.prob.a.mul_t_vec(&dy, &mut aty);
        inf_norm(&aty) <= eps
    }

    fn finish(&self, status: QpStatus, iterations: usize, res: &Residuals) -> QpSolution {
        let x: Vec<f64> = self.x.iter().zip(&self.s.d).map(|(v, d)| v * d).collect();
        let y: Vec<f64> = self
            .y
            .iter()
            .zip(&self.s.e)
            .map(|(v, e)| v * e / self.s.c)
            .collect();
        QpSolution {
            objective: objective(self.prob, &x),
            x,
            y,
            status,
            iterations,
            prim_res: res.prim,
            dual_res: res.dual,
            polished: false,
        }
    }

    /// Re-solves the equality-constrained problem on the guessed active set
    /// with proximal augmented-Lagrangian sweeps.
    fn polish(&self) -> Option<QpSolution> {
        let s = &self.s;
        let n = self.x.len();
        let m = self.z.len();
        // +1 upper, -1 lower
        let mut active: Vec<(usize, f64, f64)> = Vec::new();
        for r in 0..m {
            match self.kinds[r] {
                RowKind::Free => {}
                RowKind::Equality => active.push((r, s.l[r], 0.0)),
                RowKind::Inequality => {
                    if self.z[r] - s.l[r] < -self.y[r] {
                        active.push((r, s.l[r], -1.0));
                    } else if s.u[r] - self.z[r] < self.y[r] {
                        active.push((r, s.u[r], 1.0));
                    }
                }
            }
        }
        let mut trips = Vec::new();
        for (k, &(r, _, _)) in active.iter().enumerate() {
            let (cs, vs) = s.a.row(r);
            for (&j, &v) in cs.iter().zip(vs) {
                trips.push((k, j, v));
            }
        }
        let a_act = SparseMatrix::from_triplets(active.len(), n, &trips);
        let b: Vec<f64> = active.iter().map(|a| a.1).collect();
        let delta = 1e-7;
        let rho_p = 1e5;
        let rho_vec = vec![rho_p; active.len()];
        let factor = factor_kkt(&s.p, &a_act, delta, &rho_vec, self.bw).ok()?;
        let mut x = self.x.clone();
        let mut y: Vec<f64> = active.iter().map(|a| self.y[a.0]).collect();
        let mut ax = vec![0.0; active.len()];
        let mut tmp = vec![0.0; active.len()];
        let mut rhs = vec![0.0; n];
        for _ in 0..40 {
            for k in 0..active.len() {
                tmp[k] = rho_p * b[k] - y[k];
            }
            a_act.mul_t_vec(&tmp, &mut rhs);
            for j in 0..n {
                rhs[j] += delta * x[j] - s.q[j];
            }
            factor.solve(&mut rhs);
            let step = x
                .iter()
                .zip(&rhs)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            x.copy_from_slice(&rhs);
            a_act.mul_vec(&x, &mut ax);
            let mut viol = 0.0f64;
            for k in 0..active.len() {
                y[k] += rho_p * (ax[k] - b[k]);
                viol = viol.max((ax[k] - b[k]).abs());
            }
            if viol < 1e-13 && step < 1e-13 {
                break;
            }
        }
        // multipliers must have the sign of their bound
        let tol = 1e-9 * (1.0 + inf_norm(&y));
        for (k, &(_, _, side)) in active.iter().enumerate() {
            if side * y[k] < -tol {
                return None;
            }
        }
        let mut y_full = vec![0.0; m];
        for (k, &(r, _, _)) in active.iter().enumerate() {
            y_full[r] = y[k];
        }
        let mut z = vec![0.0; m];
        s.a.mul_vec(&x, &mut z);
        let z_proj: Vec<f64> = (0..m).map(|r| z[r].clamp(s.l[r], s.u[r])).collect();
        let res = self.residuals(&x, &z_proj, &y_full);
        let xs: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
        let ys: Vec<f64> = y_full
            .iter()
            .zip(&s.e)
            .map(|(v, e)| v * e / s.c)
            .collect();
        Some(QpSolution {
            objective: objective(self.prob, &xs),
            x: xs,
            y: ys,
            status: QpStatus::Solved,
            iterations: 0,
            prim_res: res.prim,
            dual_res: res.dual,
            polished: true,
        })
    }
}

fn rho_vector(kinds: &[RowKind], rho: f64) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Free => RHO_MIN,
            RowKind::Equality => RHO_EQ_SCALE * rho,
            RowKind::Inequality => rho,
        })
        .collect()
}

/// Factors `P + sigma I + Aᵀ diag(rho) A`.
fn factor_kkt(
    p: &SparseMatrix,
    a: &SparseMatrix,
    sigma: f64,
    rho: &[f64],
    bw: usize,
) -> Result<BandedCholesky> {
    let n = p.nrows();
    let mut k = BandedMatrix::zeros(n, bw);
    for i in 0..n {
        let (cs, vs) = p.row(i);
        for (&j, &v) in cs.iter().zip(vs) {
            if j <= i {
                k.add(i, j, v);
            }
        }
        k.add(i, i, sigma);
    }
    for (r, &rr) in rho.iter().enumerate() {
        let (cs, vs) = a.row(r);
        for (ii, (&ci, &vi)) in cs.iter().zip(vs).enumerate() {
            for (&cj, &vj) in cs[..=ii].iter().zip(&vs[..=ii]) {
                k.add(ci, cj, rr * vi * vj);
            }
        }
    }
    k.factor()
}

pub(crate) fn objective(prob: &QpProblem, x: &[f64]) -> f64 {
    let mut px = vec![0.0; x.len()];
    prob.p.mul_vec(x, &mut px);
    x.iter()
        .zip(&px)
        .zip(&prob.q)
        .map(|((xi, pxi), qi)| 0.5 * xi * pxi + qi * xi)
        .sum()
}
