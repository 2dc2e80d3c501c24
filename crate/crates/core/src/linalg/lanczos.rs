use crate::error::{Error, Result};
use crate::linalg::banded::{shifted_apply, BandedLdl, Ordering, ShiftedSolver};
use crate::linalg::dense::DMat;
use crate::linalg::sparse::Csr;
use crate::scalar::{dot, norm, Real};

/// Deterministic pseudo-random start vector (splitmix64 stream).
pub fn start_vector<T: Real>(n: usize, seed: u64) -> Vec<T> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            T::lit((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        })
        .collect()
}

/// Number of eigenvalues of the symmetric `a` strictly below `sigma`.
pub fn count_below<T: Real>(a: &Csr<T>, ordering: &Ordering, sigma: T) -> Result<usize> {
    let (_, hi) = a.gershgorin();
    let mut s = sigma;
    for attempt in 0..6 {
        let shift = vec![-s; a.nrows];
        match BandedLdl::<T, T>::factor(a, ordering, T::one(), &shift) {
            Ok(f) => return Ok(f.negative_pivots()),
            Err(_) => {
                let nudge = T::lit(1e-11) * (T::one() + hi.abs()) * T::lit((1 << attempt) as f64);
                s = sigma + nudge;
            }
        }
    }
    Err(Error::NotConverged { residual: f64::NAN })
}

fn orthogonalize<T: Real>(w: &mut [T], basis: &[Vec<T>]) -> Vec<T> {
    let mut coeffs = vec![T::zero(); basis.len()];
    for _ in 0..2 {
        for (c, v) in coeffs.iter_mut().zip(basis) {
            let h = dot(v, w);
            *c += h;
            for (wi, &vi) in w.iter_mut().zip(v.iter()) {
                *wi -= h * vi;
            }
        }
    }
    coeffs
}

/// All eigenpairs of the symmetric `a` with eigenvalue in `[lo, hi]`, by
/// shift-invert Lanczos with full reorthogonalization, thick restarts and
/// locking. The exact count comes from Sylvester inertia, so degenerate
/// eigenvalues are found even when one Krylov sequence misses them.
pub fn window_eigenpairs<T: Real>(
    a: &Csr<T>,
    lo: T,
    hi: T,
    max_count: usize,
    residual_tol: T,
) -> Result<Vec<(T, Vec<T>)>> {
    let n = a.nrows;
    let ordering = Ordering::best(a);
    let count = count_below(a, &ordering, hi)? - count_below(a, &ordering, lo)?;
    if count > max_count {
        return Err(Error::WindowTooWide { count, max_count });
    }
    if count == 0 {
        return Ok(vec![]);
    }
    let half = T::lit(0.5);
    let mut sigma = half * (lo + hi);
    let mut solver = None;
    for attempt in 0..6 {
        match ShiftedSolver::new(a, &ordering, T::one(), vec![-sigma; n]) {
            Ok(s) => {
                solver = Some(s);
                break;
            }
            Err(_) => sigma += T::lit(1e-9) * (hi - lo) * T::lit((1 + attempt) as f64),
        }
    }
    let solver = solver.ok_or(Error::NotConverged { residual: f64::NAN })?;
    let op = |x: &[T]| solver.ldl.solve(x);

    let kmax = (2 * count + 20).max(count + 40).min(n);
    let mut locked: Vec<(T, Vec<T>)> = Vec::new();
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut proj: Vec<Vec<T>> = Vec::new();
    let mut fresh_starts = 0u64;
    let mut restarts = 0usize;
    let locked_vectors = |locked: &[(T, Vec<T>)]| locked.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>();

    loop {
        if basis.is_empty() {
            let mut v = start_vector::<T>(n, 17 + fresh_starts);
            fresh_starts += 1;
            orthogonalize(&mut v, &locked_vectors(&locked));
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
            proj = vec![vec![T::zero(); 1]];
        }
        let lockv = locked_vectors(&locked);
        let mut beta;
        let resid;
        // Expand from the last basis vector up to kmax.
        loop {
            let k = basis.len();
            let mut w = op(&basis[k - 1]);
            orthogonalize(&mut w, &lockv);
            let h = orthogonalize(&mut w, &basis);
            for i in 0..k {
                proj[i][k - 1] = h[i];
                proj[k - 1][i] = h[i];
            }
            beta = norm(&w);
            let breakdown = beta <= T::lit(1e-12) * h.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::epsilon());
            if breakdown {
                let mut v = start_vector::<T>(n, 1000 + fresh_starts);
                fresh_starts += 1;
                orthogonalize(&mut v, &lockv);
                orthogonalize(&mut v, &basis);
                let nv = norm(&v);
                v.iter_mut().for_each(|x| *x /= nv);
                w = v;
                beta = T::zero();
            } else {
                w.iter_mut().for_each(|x| *x /= beta);
            }
            if k >= kmax || k + locked.len() >= n {
                resid = w;
                break;
            }
            basis.push(w);
            for row in proj.iter_mut() {
                row.push(T::zero());
            }
            proj.push(vec![T::zero(); k + 1]);
            proj[k][k - 1] = beta;
            proj[k - 1][k] = beta;
        }
        let k = basis.len();
        // True residual of a Ritz pair: beta |s_k| / |theta| * |(A - sigma) r|.
        let resid_gain = norm(&shifted_apply(a, T::one(), &vec![-sigma; n], &resid));
        let mut t = DMat::from_fn(k, k, |i, j| proj[i][j]);
        t.symmetrize();
        let (theta, s) = t.symmetric_eigen();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&x, &y| theta[y].abs().partial_cmp(&theta[x].abs()).unwrap());
        let wanted = count - locked.len();
        let ritz = |j: usize| -> Vec<T> {
            let mut x = vec![T::zero(); n];
            for (i, v) in basis.iter().enumerate() {
                let c = s[(i, j)];
                for (xi, &vi) in x.iter_mut().zip(v) {
                    *xi += c * vi;
                }
            }
            x
        };
        let mut newly_locked = Vec::new();
        let mut progress_blocked = false;
        for &j in idx.iter().take(wanted) {
            let th = theta[j];
            if th == T::zero() {
                continue;
            }
            let lam = sigma + T::one() / th;
            let est = beta * s[(k - 1, j)].abs() / th.abs() * resid_gain;
            if est <= residual_tol * T::lit(0.1) {
                if lam >= lo && lam <= hi {
                    newly_locked.push(j);
                } else {
                    progress_blocked = true;
                }
            }
        }
        for &j in &newly_locked {
            let th = theta[j];
            let mut x = ritz(j);
            let nx = norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            locked.push((sigma + T::one() / th, x));
        }
        if locked.len() >= count {
            break;
        }
        restarts += 1;
        if restarts > 300 || fresh_starts > 40 {
            return Err(Error::NotConverged { residual: f64::NAN });
        }
        if progress_blocked && newly_locked.is_empty() {
            // Remaining window eigenvalues are invisible to this Krylov space.
            basis.clear();
            continue;
        }
        let keep: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|j| !newly_locked.contains(j))
            .take((count - locked.len() + (kmax - count.min(kmax)) / 2).min(k.saturating_sub(1)).max(1))
            .collect();
        let mut new_basis = Vec::with_capacity(kmax);
        for &j in &keep {
            let mut x = ritz(j);
            let nx = norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            new_basis.push(x);
        }
        let p = keep.len();
        let mut new_proj = vec![vec![T::zero(); p + 1]; p + 1];
        for (a_, &j) in keep.iter().enumerate() {
            new_proj[a_][a_] = theta[j];
            new_proj[p][a_] = beta * s[(k - 1, j)];
            new_proj[a_][p] = beta * s[(k - 1, j)];
        }
        let mut r = resid;
        orthogonalize(&mut r, &new_basis);
        let nr = norm(&r);
        r.iter_mut().for_each(|v| *v /= nr);
        new_basis.push(r);
        basis = new_basis;
        proj = new_proj;
    }

    // One block inverse-iteration step damps high-energy rounding noise, then
    // Rayleigh-Ritz over the locked subspace and an explicit residual check.
    let mut vecs: Vec<Vec<T>> = Vec::with_capacity(count);
    for (_, x) in locked.into_iter() {
        let mut x = op(&x);
        orthogonalize(&mut x, &vecs);
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        vecs.push(x);
    }
    let m = vecs.len();
    let avecs: Vec<Vec<T>> = vecs.iter().map(|v| a.apply(v)).collect();
    let mut g = DMat::from_fn(m, m, |i, j| dot(&vecs[i], &avecs[j]));
    g.symmetrize();
    let (vals, rot) = g.symmetric_eigen();
    let mut pairs: Vec<(T, Vec<T>)> = Vec::with_capacity(m);
    for (j, &lam) in vals.iter().enumerate() {
        let mut x = vec![T::zero(); n];
        let mut ax = vec![T::zero(); n];
        for i in 0..m {
            let c = rot[(i, j)];
            for ((xk, axk), (&vk, &avk)) in x.iter_mut().zip(ax.iter_mut()).zip(vecs[i].iter().zip(&avecs[i])) {
                *xk += c * vk;
                *axk += c * avk;
            }
        }
        let res: T = ax.iter().zip(&x).map(|(&y, &v)| (y - lam * v) * (y - lam * v)).sum::<T>().sqrt();
        if res > residual_tol {
            return Err(Error::NotConverged { residual: res.f64() });
        }
        pairs.push((lam, x));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap1d(n: usize) -> Csr<f64> {
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn finds_all_window_eigenvalues() {
        let n = 400;
        let a = lap1d(n);
        let exact: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (n + 1) as f64).cos())
            .collect();
        let (lo, hi) = (0.5, 0.9);
        let pairs = window_eigenpairs(&a, lo, hi, 200, 1e-9).unwrap();
        let want: Vec<f64> = exact.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
        assert_eq!(pairs.len(), want.len());
        for ((l, _), w) in pairs.iter().zip(&want) {
            assert!((l - w).abs() < 1e-10);
        }
    }

    #[test]
    fn finds_degenerate_pairs() {
        // Periodic ring: every nonzero eigenvalue has multiplicity two.
        let n = 60;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 2.0));
            t.push((i, (i + 1) % n, -1.0));
            t.push(((i + 1) % n, i, -1.0));
        }
        let a = Csr::from_triplets(n, n, t);
        let pairs = window_eigenpairs(&a, 0.05, 1.5, 100, 1e-9).unwrap();
        let expect = (0..n)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .filter(|&v| (0.05..=1.5).contains(&v))
            .count();
        assert_eq!(pairs.len(), expect);
        for i in 0..pairs.len() {
            for j in 0..i {
                assert!(dot::<f64, f64>(&pairs[i].1, &pairs[j].1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_wide_window_is_reported() {
        let a = lap1d(50);
        assert!(matches!(window_eigenpairs(&a, 0.0, 4.0, 10, 1e-9), Err(Error::WindowTooWide { .. })));
    }
}
