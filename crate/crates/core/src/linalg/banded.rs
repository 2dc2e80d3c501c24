use std::collections::VecDeque;

use crate::linalg::sparse::Csr;
use crate::scalar::{Field, Real};

/// Symmetric fill-reducing permutation: `order[new] = old`.
#[derive(Clone, Debug)]
pub struct Ordering {
    pub order: Vec<usize>,
    pub position: Vec<usize>,
    pub bandwidth: usize,
}

impl Ordering {
    pub fn identity(a: &Csr<impl Real>) -> Self {
        let order: Vec<usize> = (0..a.nrows).collect();
        Self::from_order(a, order)
    }

    fn from_order<T: Real>(a: &Csr<T>, order: Vec<usize>) -> Self {
        let mut position = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut bandwidth = 0;
        for (i, j, _) in a.triplets() {
            bandwidth = bandwidth.max(position[i].abs_diff(position[j]));
        }
        Ordering { order, position, bandwidth }
    }

    /// Reverse Cuthill-McKee from a pseudo-peripheral start.
    pub fn rcm<T: Real>(a: &Csr<T>) -> Self {
        let n = a.nrows;
        let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).unwrap();
            let start = pseudo_peripheral(a, seed, &visited);
            let mut queue = VecDeque::from([start]);
            visited[start] = true;
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut nbrs: Vec<usize> =
                    a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
                nbrs.sort_by_key(|&w| (degree[w], w));
                for w in nbrs {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        Self::from_order(a, order)
    }

    /// For a natural order `outer * inner + k` with `k` periodic: `k` is visited
    /// as 0, 1, inner-1, 2, inner-2, ... with the outer index fastest, so
    /// neighbours across the periodic seam stay within two outer blocks.
    pub fn folded<T: Real>(a: &Csr<T>, inner: usize) -> Self {
        let n = a.nrows;
        assert!(inner > 0 && n.is_multiple_of(inner), "inner size must divide the dimension");
        let outer = n / inner;
        let mut seq = Vec::with_capacity(inner);
        seq.push(0);
        let (mut lo, mut hi) = (1, inner - 1);
        while lo <= hi {
            seq.push(lo);
            if hi != lo {
                seq.push(hi);
            }
            lo += 1;
            hi -= 1;
        }
        let order = seq.iter().flat_map(|&k| (0..outer).map(move |i| i * inner + k)).collect();
        Self::from_order(a, order)
    }

    /// The narrowest of the natural, RCM and folded orderings; fold sizes are
    /// guessed from the neighbours of node 0.
    pub fn best<T: Real>(a: &Csr<T>) -> Self {
        let mut best = Self::identity(a);
        let n = a.nrows;
        let mut guesses: Vec<usize> = a.row(0).0.iter().flat_map(|&j| [j, j + 1]).filter(|&c| c > 2 && c < n && n.is_multiple_of(c)).collect();
        guesses.sort_unstable();
        guesses.dedup();
        let candidates = std::iter::once(Self::rcm(a)).chain(guesses.into_iter().map(|c| Self::folded(a, c)));
        for cand in candidates {
            if cand.bandwidth < best.bandwidth {
                best = cand;
            }
        }
        best
    }
}

fn bfs_levels<T: Real>(a: &Csr<T>, start: usize, blocked: &[bool]) -> (usize, usize) {
    let mut dist = vec![usize::MAX; a.nrows];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in a.row(v).0 {
            if !blocked[w] && dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (last, dist[last])
}

fn pseudo_peripheral<T: Real>(a: &Csr<T>, seed: usize, blocked: &[bool]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let (far, d) = bfs_levels(a, node, blocked);
        if d <= ecc {
            break;
        }
        ecc = d;
        node = far;
    }
    node
}

/// Banded LDL^T factorization (no pivoting) of `scale * A + diag(shift)` for a
/// symmetric sparse `A`; the field may be real or complex, so complex-symmetric
/// shifts such as `A - z` are factored directly.
pub struct BandedLdl<T: Real, F: Field<T>> {
    n: usize,
    bw: usize,
    ordering: Ordering,
    lower: Vec<F>,
    d: Vec<F>,
    _t: std::marker::PhantomData<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot {
    pub row: usize,
}

impl<T: Real, F: Field<T>> BandedLdl<T, F> {
    pub fn factor(a: &Csr<T>, ordering: &Ordering, scale: F, shift: &[F]) -> Result<Self, ZeroPivot> {
        let n = a.nrows;
        assert_eq!(shift.len(), n);
        let bw = ordering.bandwidth;
        let mut lower = vec![F::zero(); n * bw];
        let mut diag = vec![F::zero(); n];
        let mut norm = T::zero();
        for (i, j, v) in a.triplets() {
            let (p, q) = (ordering.position[i], ordering.position[j]);
            norm = norm.max(v.abs());
            if p == q {
                diag[p] += scale * v;
            } else if q < p {
                lower[p * bw + (q + bw - p)] += scale * v;
            }
        }
        for (old, &s) in shift.iter().enumerate() {
            diag[ordering.position[old]] += s;
            norm = norm.max(s.modulus());
        }
        let tiny = T::epsilon() * T::epsilon() * norm.max(T::one());
        let mut w = vec![F::zero(); bw];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                // s = a_ij - sum_k L_ik d_k L_jk over k in [max(lo, j - bw), j)
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = lower[i * bw + (j + bw - i)];
                let row_j = j * bw;
                for k in klo..j {
                    s -= w[k + bw - i] * lower[row_j + (k + bw - j)];
                }
                w[j + bw - i] = s;
                lower[i * bw + (j + bw - i)] = s / diag[j];
            }
            let mut di = diag[i];
            for j in lo..i {
                di -= w[j + bw - i] * lower[i * bw + (j + bw - i)];
            }
            if di.modulus() <= tiny {
                return Err(ZeroPivot { row: i });
            }
            diag[i] = di;
        }
        Ok(BandedLdl { n, bw, ordering: ordering.clone(), lower, d: diag, _t: Default::default() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Number of negative pivots: by Sylvester's law, the count of eigenvalues
    /// below the shift when the factored matrix is real symmetric.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|d| d.real() < T::zero()).count()
    }

    pub fn min_pivot(&self) -> T {
        self.d.iter().fold(T::infinity(), |m, d| m.min(d.modulus()))
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let (n, bw) = (self.n, self.bw);
        let mut y: Vec<F> = self.ordering.order.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            let row = &self.lower[i * bw..(i + 1) * bw];
            for k in lo..i {
                s -= row[k + bw - i] * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let xi = y[i];
            let lo = i.saturating_sub(bw);
            let row = &self.lower[i * bw..(i + 1) * bw];
            for k in lo..i {
                y[k] -= row[k + bw - i] * xi;
            }
        }
        let mut x = vec![F::zero(); n];
        for (new, &old) in self.ordering.order.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Applies `scale * A + diag(shift)` to `x`.
pub fn shifted_apply<T: Real, F: Field<T>>(a: &Csr<T>, scale: F, shift: &[F], x: &[F]) -> Vec<F> {
    let mut y = a.apply(x);
    for i in 0..y.len() {
        y[i] = scale * y[i] + shift[i] * x[i];
    }
    y
}

/// Factorization bundled with its matrix for residual-checked solves.
pub struct ShiftedSolver<'a, T: Real, F: Field<T>> {
    pub a: &'a Csr<T>,
    pub scale: F,
    pub shift: Vec<F>,
    pub ldl: BandedLdl<T, F>,
    /// Infinity-norm bound of scale * a + diag(shift).
    pub norm_bound: T,
}

impl<'a, T: Real, F: Field<T>> ShiftedSolver<'a, T, F> {
    pub fn new(a: &'a Csr<T>, ordering: &Ordering, scale: F, shift: Vec<F>) -> Result<Self, ZeroPivot> {
        let ldl = BandedLdl::factor(a, ordering, scale, &shift)?;
        let row_sum = (0..a.nrows)
            .map(|i| a.row(i).1.iter().fold(T::zero(), |s, v| s + v.abs()))
            .fold(T::zero(), T::max);
        let shift_max = shift.iter().fold(T::zero(), |m, s| m.max(s.modulus()));
        let norm_bound = scale.modulus() * row_sum + shift_max;
        Ok(ShiftedSolver { a, scale, shift, ldl, norm_bound })
    }

    /// Solve with up to `max_refine` steps of iterative refinement; returns the
    /// solution and its normwise backward error |b - Mx| / (|M| |x| + |b|).
    pub fn solve_refined(&self, b: &[F], rel_tol: T, max_refine: usize) -> (Vec<F>, T) {
        let bnorm = crate::scalar::norm(b);
        if bnorm == T::zero() {
            return (vec![F::zero(); b.len()], T::zero());
        }
        let mut x = self.ldl.solve(b);
        let mut rel = T::infinity();
        for _ in 0..=max_refine {
            let ax = shifted_apply(self.a, self.scale, &self.shift, &x);
            let r: Vec<F> = b.iter().zip(&ax).map(|(&bi, &yi)| bi - yi).collect();
            rel = crate::scalar::norm(&r) / (self.norm_bound * crate::scalar::norm(&x) + bnorm);
            if rel <= rel_tol {
                break;
            }
            let dx = self.ldl.solve(&r);
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        (x, rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn lap2d(nx: usize, ny: usize) -> Csr<f64> {
        let idx = |i: usize, j: usize| i * ny + j;
        let mut t = vec![];
        for i in 0..nx {
            for j in 0..ny {
                t.push((idx(i, j), idx(i, j), 4.0));
                if i + 1 < nx {
                    t.push((idx(i, j), idx(i + 1, j), -1.0));
                    t.push((idx(i + 1, j), idx(i, j), -1.0));
                }
                let jn = (j + 1) % ny;
                t.push((idx(i, j), idx(i, jn), -1.0));
                t.push((idx(i, jn), idx(i, j), -1.0));
            }
        }
        Csr::from_triplets(nx * ny, nx * ny, t)
    }

    #[test]
    fn real_and_complex_solves() {
        let a = lap2d(7, 9);
        let ord = Ordering::best(&a);
        let n = a.nrows;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = ShiftedSolver::new(&a, &ord, 1.0, vec![-1.3; n]).unwrap();
        let (_, rel) = s.solve_refined(&b, 1e-13, 2);
        assert!(rel < 1e-13);
        let bc: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, -v)).collect();
        let z = Complex64::new(2.0, 0.5);
        let s = ShiftedSolver::new(&a, &ord, Complex64::new(1.0, 0.0), vec![-z; n]).unwrap();
        let (_, rel) = s.solve_refined(&bc, 1e-13, 2);
        assert!(rel < 1e-13);
    }

    #[test]
    fn inertia_counts_eigenvalues() {
        let a = lap2d(5, 6);
        let (vals, _) = a.to_dense().symmetric_eigen();
        let ord = Ordering::rcm(&a);
        for sigma in [0.5, 2.1, 3.77, 5.9] {
            let f = BandedLdl::<f64, f64>::factor(&a, &ord, 1.0, &vec![-sigma; a.nrows]).unwrap();
            let expect = vals.iter().filter(|&&v| v < sigma).count();
            assert_eq!(f.negative_pivots(), expect);
        }
    }

    #[test]
    fn rcm_narrows_periodic_band() {
        let a = lap2d(4, 40);
        assert!(Ordering::best(&a).bandwidth < Ordering::identity(&a).bandwidth + 1);
    }
}
