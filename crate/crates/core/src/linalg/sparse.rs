use rayon::prelude::*;

use crate::scalar::{Field, Real};

const PAR_ROWS: usize = 16_384;

/// Compressed sparse row matrix with real entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from unsorted triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, T)>) -> Self {
        trips.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut data: Vec<T> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indptr[i + 1] += 1;
                indices.push(j);
                data.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Csr { nrows, ncols, indptr, indices, data }.pruned()
    }

    fn pruned(self) -> Self {
        if self.data.iter().all(|v| *v != T::zero()) {
            return self;
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                if self.data[p] != T::zero() {
                    indices.push(self.indices[p]);
                    data.push(self.data[p]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], data: vec![] }
    }

    pub fn diag(d: &[T]) -> Self {
        let trips = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), trips)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![T::one(); n])
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (idx, vals) = self.row(i);
        match idx.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (idx, vals) = self.row(i);
            idx.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn matvec<F: Field<T>>(&self, x: &[F], y: &mut [F]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row_dot = |i: usize| {
            let (idx, vals) = self.row(i);
            let mut acc = F::zero();
            for (&j, &v) in idx.iter().zip(vals) {
                acc += x[j] * v;
            }
            acc
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
    }

    pub fn apply<F: Field<T>>(&self, x: &[F]) -> Vec<F> {
        let mut y = vec![F::zero(); self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let p = next[j];
                indices[p] = i;
                data[p] = v;
                next[j] += 1;
            }
        }
        Csr { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, data }
    }

    /// alpha * self + beta * other.
    pub fn add_scaled(&self, alpha: T, other: &Csr<T>, beta: T) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trips = Vec::with_capacity(self.nnz() + other.nnz());
        trips.extend(self.triplets().map(|(i, j, v)| (i, j, alpha * v)));
        trips.extend(other.triplets().map(|(i, j, v)| (i, j, beta * v)));
        Self::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// diag(left) * self * diag(right).
    pub fn scale_rows_cols(&self, left: Option<&[T]>, right: Option<&[T]>) -> Self {
        let mut out = self.clone();
        for i in 0..out.nrows {
            let li = left.map_or(T::one(), |l| l[i]);
            for p in out.indptr[i]..out.indptr[i + 1] {
                let rj = right.map_or(T::one(), |r| r[out.indices[p]]);
                out.data[p] = out.data[p] * li * rj;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Csr<T>) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut acc = vec![T::zero(); other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            let (ia, va) = self.row(i);
            for (&k, &a) in ia.iter().zip(va) {
                let (ib, vb) = other.row(k);
                for (&j, &b) in ib.iter().zip(vb) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = T::zero();
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                if acc[j] != T::zero() {
                    indices.push(j);
                    data.push(acc[j]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: other.ncols, indptr, indices, data }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// max |a_ij - a_ji|.
    pub fn symmetry_defect(&self) -> T {
        self.add_scaled(T::one(), &self.transpose(), -T::one()).max_abs()
    }

    /// max |a_ij + a_ji|.
    pub fn antisymmetry_defect(&self) -> T {
        self.add_scaled(T::one(), &self.transpose(), T::one()).max_abs()
    }

    /// (self + self^T) / 2.
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        self.add_scaled(half, &self.transpose(), half)
    }

    /// Gershgorin enclosure [lo, hi] of the spectrum of a symmetric matrix.
    pub fn gershgorin(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for i in 0..self.nrows {
            let (idx, vals) = self.row(i);
            let mut d = T::zero();
            let mut off = T::zero();
            for (&j, &v) in idx.iter().zip(vals) {
                if j == i {
                    d = v;
                } else {
                    off += v.abs();
                }
            }
            lo = lo.min(d - off);
            hi = hi.max(d + off);
        }
        if self.nrows == 0 {
            (T::zero(), T::zero())
        } else {
            (lo, hi)
        }
    }

    pub fn to_dense(&self) -> crate::linalg::dense::DMat<T> {
        let mut m = crate::linalg::dense::DMat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Csr<f64> {
        Csr::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (2, 2, 3.0), (0, 1, 0.5)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = small();
        assert_eq!(a.get(0, 1), -0.5);
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn transpose_and_matmul() {
        let a = small();
        let at = a.transpose();
        assert_eq!(at.get(1, 0), -0.5);
        let p = a.matmul(&Csr::identity(3));
        assert_eq!(p, a);
        let x = vec![1.0, 2.0, 3.0];
        let y = a.apply(&x);
        assert_eq!(y, vec![2.0 - 1.0, -1.0 + 4.0, 9.0]);
    }

    #[test]
    fn gershgorin_encloses() {
        let (lo, hi) = small().gershgorin();
        assert!(lo <= 1.0 && hi >= 3.0);
    }
}
