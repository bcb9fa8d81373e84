use crate::{Error, Result};

/// Symmetric matrix stored by its lower band: entry `(i, j)` with
/// `i - bw <= j <= i`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                let ri = self.idx(i, k0);
                let rj = self.idx(j, k0);
                for t in 0..(j - k0) {
                    s -= self.data[ri + t] * self.data[rj + t];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Convergence(format!(
                            "banded Cholesky: non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    let k = self.idx(i, i);
                    self.data[k] = s.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = s / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

impl BandedMatrix {
    /// `A = L D Lᵀ` without pivoting. Works for quasi-definite matrices
    /// (positive block, negative block) in any ordering.
    pub fn factor_ldl(mut self) -> Result<BandedLdl> {
        let (n, bw) = (self.n, self.bw);
        let mut d = vec![0.0; n];
        let mut tmp = vec![0.0; bw + 1];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            // row i of L times D, reused across the columns below
            for j in j0..i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                let rj = self.idx(j, k0);
                for t in 0..(j - k0) {
                    s -= tmp[k0 - j0 + t] * self.data[rj + t];
                }
                tmp[j - j0] = s;
                let k = self.idx(i, j);
                self.data[k] = s / d[j];
            }
            let mut s = self.data[self.idx(i, i)];
            for j in j0..i {
                s -= tmp[j - j0] * self.data[self.idx(i, j)];
            }
            if s == 0.0 || !s.is_finite() {
                return Err(Error::Convergence(format!(
                    "banded LDL: zero pivot at row {i}"
                )));
            }
            d[i] = s;
        }
        Ok(BandedLdl { l: self, d })
    }
}

/// Banded unit-lower `L` and diagonal `D`.
#[derive(Clone, Debug)]
pub struct BandedLdl {
    l: BandedMatrix,
    d: Vec<f64>,
}

impl BandedLdl {
    pub fn solve(&self, b: &mut [f64]) {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = l.idx(i, j0);
            let mut s = b[i];
            for (t, bj) in b[j0..i].iter().enumerate() {
                s -= l.data[row + t] * bj;
            }
            b[i] = s;
        }
        for (bi, di) in b.iter_mut().zip(&self.d) {
            *bi /= di;
        }
        for i in (0..n).rev() {
            let bi = b[i];
            let j0 = i.saturating_sub(bw);
            let row = l.idx(i, j0);
            for (t, bj) in b[j0..i].iter_mut().enumerate() {
                *bj -= l.data[row + t] * bi;
            }
        }
    }
}

/// Banded lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    l: BandedMatrix,
}

impl BandedCholesky {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = l.idx(i, j0);
            let mut s = b[i];
            for (t, bj) in b[j0..i].iter().enumerate() {
                s -= l.data[row + t] * bj;
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            b[i] /= l.data[l.idx(i, i)];
            let bi = b[i];
            let j0 = i.saturating_sub(bw);
            let row = l.idx(i, j0);
            for (t, bj) in b[j0..i].iter_mut().enumerate() {
                *bj -= l.data[row + t] * bi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_spd_band_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, bw) = (40, 5);
        let mut a = BandedMatrix::zeros(n, bw);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a.add(i, j, v);
                dense[i][j] += v;
                dense[j][i] += v;
            }
            a.add(i, i, 12.0);
            dense[i][i] += 12.0;
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = dense
            .iter()
            .map(|row| row.iter().zip(&x_true).map(|(a, x)| a * x).sum())
            .collect();
        a.factor().unwrap().solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12);
        }
    }

    #[test]
    fn ldl_solves_quasi_definite_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, bw) = (30, 4);
        let mut a = BandedMatrix::zeros(n, bw);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a.add(i, j, v);
                dense[i][j] += v;
                dense[j][i] += v;
            }
            let diag = if i % 3 == 2 { -9.0 } else { 9.0 };
            a.add(i, i, diag);
            dense[i][i] += diag;
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut b: Vec<f64> = dense
            .iter()
            .map(|row| row.iter().zip(&x_true).map(|(a, x)| a * x).sum())
            .collect();
        a.factor_ldl().unwrap().solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12, "{x} vs {t}");
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = BandedMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        assert!(a.factor().is_err());
    }
}
