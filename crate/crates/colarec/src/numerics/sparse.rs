//! Compressed sparse row matrices, used for graph propagation.

use super::real::Real;
use super::tensor::Tensor;

/// Square-or-rectangular sparse matrix in CSR form.
#[derive(Clone, Debug)]
pub struct CsrMatrix<F: Real> {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<F>,
}

impl<F: Real> CsrMatrix<F> {
    /// Build from (row, col, value) triplets. Triplets are sorted by
    /// (row, col); duplicate coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, F)>,
    ) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, F)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut indptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices: merged.iter().map(|t| t.1).collect(),
            values: merged.iter().map(|t| t.2).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[s..e]
            .iter()
            .zip(self.values[s..e].iter())
            .map(|(&c, &v)| (c, v))
    }

    /// `Y = S · X` with `X` dense of shape `[n_cols, d]`.
    pub fn matmul_dense(&self, x: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(x.shape()[0], self.n_cols);
        let d = x.shape()[1];
        let mut out = Tensor::zeros(&[self.n_rows, d]);
        for r in 0..self.n_rows {
            let (s, e) = (self.indptr[r], self.indptr[r + 1]);
            let out_row = out.row_mut(r);
            for idx in s..e {
                let (c, v) = (self.indices[idx], self.values[idx]);
                let x_row = x.row(c);
                for (o, &xv) in out_row.iter_mut().zip(x_row.iter()) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// `Y = Sᵀ · G` with `G` dense of shape `[n_rows, d]`, computed by
    /// scattering rows in a fixed order so results are deterministic.
    pub fn transpose_matmul_dense(&self, g: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(g.shape()[0], self.n_rows);
        let d = g.shape()[1];
        let mut out = Tensor::zeros(&[self.n_cols, d]);
        for r in 0..self.n_rows {
            let (s, e) = (self.indptr[r], self.indptr[r + 1]);
            let g_row = g.row(r);
            for idx in s..e {
                let (c, v) = (self.indices[idx], self.values[idx]);
                let out_row = out.row_mut(c);
                for (o, &gv) in out_row.iter_mut().zip(g_row.iter()) {
                    *o += v * gv;
                }
            }
        }
        out
    }

    /// Dense copy, for test oracles on small matrices.
    pub fn to_dense(&self) -> Tensor<F> {
        let mut out = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                out.row_mut(r)[c] += v;
            }
        }
        out
    }
}
