//! Compressed sparse row matrices for graph operators.

use ndarray::{ArrayView2, ArrayViewMut2};

use super::Scalar;

/// CSR matrix. Column indices within a row are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<F> {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<F>,
}

impl<F: Scalar> Csr<F> {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, F)]) -> Self {
        let mut sorted: Vec<(usize, usize, F)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<F> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, F::one())).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &t)
    }

    pub fn cast<G: Scalar>(&self) -> Csr<G> {
        Csr {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self
                .values
                .iter()
                .map(|v| G::c(v.to_f64().unwrap()))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> ndarray::Array2<F> {
        let mut d = ndarray::Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                d[[r, c]] += v;
            }
        }
        d
    }

    pub fn row_sums(&self) -> Vec<F> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// `out += alpha * self * x`, with `x` of shape (cols, C) and `out` (rows, C).
    pub fn matmul_acc(&self, alpha: F, x: ArrayView2<F>, mut out: ArrayViewMut2<F>) {
        assert_eq!(x.nrows(), self.cols);
        assert_eq!(out.nrows(), self.rows);
        assert_eq!(x.ncols(), out.ncols());
        let c = x.ncols();
        let xs = x.as_slice().expect("contiguous input");
        let os = out.as_slice_mut().expect("contiguous output");
        for r in 0..self.rows {
            let orow = &mut os[r * c..(r + 1) * c];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = alpha * self.values[k];
                let xrow = &xs[self.indices[k] * c..(self.indices[k] + 1) * c];
                for (o, xv) in orow.iter_mut().zip(xrow) {
                    *o += v * *xv;
                }
            }
        }
    }

    pub fn matmul(&self, x: ArrayView2<F>) -> ndarray::Array2<F> {
        let mut out = ndarray::Array2::zeros((self.rows, x.ncols()));
        self.matmul_acc(F::one(), x, out.view_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed_and_transpose_matches_dense() {
        let m = Csr::<f64>::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0), (1, 2, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), array![[0.0, 3.0, 0.0], [4.0, 0.0, -1.0]]);
        assert_eq!(m.transpose().to_dense(), m.to_dense().t().to_owned());
    }

    #[test]
    fn matmul_matches_dense() {
        let m = Csr::<f64>::from_triplets(2, 3, &[(0, 0, 2.0), (1, 2, 3.0), (1, 1, 1.0)]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(x.view()), m.to_dense().dot(&x));
    }
}
