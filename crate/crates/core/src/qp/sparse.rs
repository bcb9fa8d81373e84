/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros kept out.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals,
        };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix::from_triplets(nrows, ncols, &[])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(cols, values)` of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> (&[usize], &mut [f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &mut self.vals[a..b])
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.nrows) {
            let (c, v) = self.row(r);
            *o = c.iter().zip(v).map(|(&j, a)| a * x[j]).sum();
        }
    }

    /// `out = selfᵀ * y`
    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, yr) in y.iter().enumerate().take(self.nrows) {
            if *yr == 0.0 {
                continue;
            }
            let (c, v) = self.row(r);
            for (&j, a) in c.iter().zip(v) {
                out[j] += a * yr;
            }
        }
    }

    /// Largest `|i - j|` over the stored entries of a square matrix.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|r| self.row(r).0.iter().map(move |&c| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    /// Largest column spread `max col - min col` of any row.
    pub fn row_spread(&self) -> usize {
        (0..self.nrows)
            .map(|r| {
                let c = self.row(r).0;
                match (c.first(), c.last()) {
                    (Some(a), Some(b)) => b - a,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let m = SparseMatrix::from_triplets(
            2,
            3,
            &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0), (0, 0, 0.5), (1, 2, 0.0)],
        );
        assert_eq!(m.nnz(), 3);
        let mut out = [0.0; 2];
        m.mul_vec(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [7.5, -2.0]);
        let mut out = [0.0; 3];
        m.mul_t_vec(&[1.0, 2.0], &mut out);
        assert_eq!(out, [1.5, -2.0, 2.0]);
        assert_eq!(m.row_spread(), 2);
    }
}
