//! Point spectrum, resolvents, weighted resolvent norms, the
//! limiting-absorption scan and smooth spectral filters.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::smooth_step;
use crate::linalg::banded::{Ordering, ShiftedSolver};
use crate::linalg::chebyshev::ChebyshevSeries;
use crate::linalg::dense::DMat;
use crate::linalg::lanczos::{count_below, start_vector, window_eigenpairs};
use crate::linalg::sparse::Csr;
use crate::operators::{LinearOperatorMatrix, SymmetryClass};
use crate::scalar::{conj_vec, dot, norm, Real};

/// Energy interval I = (nu - tau, nu + tau) with excluded energies and margin eta.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralWindow<T> {
    pub nu: T,
    pub tau: T,
    pub exclusions: Vec<T>,
    pub eta: T,
}

impl<T: Real> SpectralWindow<T> {
    pub fn from_interval(lo: T, hi: T, eta: T) -> Self {
        let half = T::lit(0.5);
        SpectralWindow { nu: half * (lo + hi), tau: half * (hi - lo), exclusions: vec![], eta }
    }

    pub fn lo(&self) -> T {
        self.nu - self.tau
    }

    pub fn hi(&self) -> T {
        self.nu + self.tau
    }

    /// Excluded energies that fall within eta of the window.
    pub fn conflicts(&self) -> Vec<T> {
        self.exclusions
            .iter()
            .copied()
            .filter(|&e| e > self.lo() - self.eta && e < self.hi() + self.eta)
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.conflicts().is_empty()
    }

    /// `n` equispaced interior energies.
    pub fn energy_grid(&self, n: usize) -> Vec<T> {
        let step = T::lit(2.0) * self.tau / T::of_usize(n + 1);
        (1..=n).map(|k| self.lo() + step * T::of_usize(k)).collect()
    }
}

fn require_self_adjoint<T: Real>(op: &LinearOperatorMatrix<T>) -> Result<()> {
    if op.class != SymmetryClass::SelfAdjoint {
        return Err(Error::InvalidArgument("operator must be self-adjoint".into()));
    }
    Ok(())
}

/// All eigenpairs with eigenvalue in [lo, hi] (ascending), residual <= 1e-8,
/// eigenvectors orthonormal in the scaled representation.
pub fn eigenpairs<T: Real>(
    op: &LinearOperatorMatrix<T>,
    lo: T,
    hi: T,
    max_count: usize,
) -> Result<Vec<(T, Vec<T>)>> {
    require_self_adjoint(op)?;
    let tol = T::lit(1e-8).max(T::lit(100.0) * T::epsilon() * op.matrix.max_abs());
    window_eigenpairs(&op.matrix, lo, hi, max_count, tol)
}

/// Number of eigenvalues in [lo, hi) by inertia.
pub fn count_in<T: Real>(a: &Csr<T>, lo: T, hi: T) -> Result<usize> {
    let ord = Ordering::best(a);
    Ok(count_below(a, &ord, hi)? - count_below(a, &ord, lo)?)
}

/// Mean level spacing in [lo, hi].
pub fn level_spacing<T: Real>(a: &Csr<T>, lo: T, hi: T) -> Result<T> {
    let count = count_in(a, lo, hi)?;
    Ok((hi - lo) / T::of_usize(count.max(1)))
}

/// Factorized resolvent (op - z)^{-1} of a real symmetric operator.
pub struct Resolvent<'a, T: Real> {
    pub z: Complex<T>,
    solver: ShiftedSolver<'a, T, Complex<T>>,
}

impl<'a, T: Real> Resolvent<'a, T> {
    /// Errors with NearSingular for real z within 1e-8 of a known eigenvalue.
    pub fn new(a: &'a Csr<T>, z: Complex<T>, known_eigenvalues: &[T]) -> Result<Self> {
        Self::with_ordering(a, &Ordering::best(a), z, known_eigenvalues)
    }

    pub fn with_ordering(a: &'a Csr<T>, ordering: &Ordering, z: Complex<T>, known: &[T]) -> Result<Self> {
        let near = |z: Complex<T>| Error::NearSingular { re: z.re.f64(), im: z.im.f64() };
        if z.im == T::zero() && known.iter().any(|&e| (e - z.re).abs() <= T::lit(1e-8)) {
            return Err(near(z));
        }
        let shift = vec![-z; a.nrows];
        let solver = ShiftedSolver::new(a, ordering, Complex::new(T::one(), T::zero()), shift).map_err(|_| near(z))?;
        Ok(Resolvent { z, solver })
    }

    /// (op - z)^{-1} rhs with relative residual <= 1e-10.
    pub fn apply(&self, rhs: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let tol = T::lit(1e-10).max(T::lit(1e3) * T::epsilon());
        let (x, rel) = self.solver.solve_refined(rhs, tol, 4);
        if rel > tol {
            return Err(Error::NotConverged { residual: rel.f64() });
        }
        Ok(x)
    }

    /// (op - conj z)^{-1} rhs = conj((op - z)^{-1} conj rhs) for real op.
    pub fn apply_conjugate(&self, rhs: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        Ok(conj_vec(&self.apply(&conj_vec(rhs))?))
    }
}

/// One-shot (op - z)^{-1} rhs.
pub fn resolvent_apply<T: Real>(op: &LinearOperatorMatrix<T>, z: Complex<T>, rhs: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    require_self_adjoint(op)?;
    Resolvent::new(&op.matrix, z, &[])?.apply(rhs)
}

/// <r>^{-s} in node order.
pub fn radial_weight<T: Real>(r: &[T], s: T) -> Vec<T> {
    r.iter().map(|&x| (T::one() + x * x).sqrt().powf(-s)).collect()
}

/// Largest singular value of B given x -> B* B x, by Lanczos on the Hermitian
/// B* B (a Krylov-accelerated power iteration). Stops when the top Ritz value
/// changes by at most `rel_tol` relative.
pub fn top_singular_value<T: Real>(
    n: usize,
    gram: impl Fn(&[Complex<T>]) -> Result<Vec<Complex<T>>>,
    rel_tol: T,
    seed: u64,
) -> Result<T> {
    let re: Vec<T> = start_vector(n, seed);
    let im: Vec<T> = start_vector(n, seed.wrapping_add(1));
    let mut q: Vec<Complex<T>> = re.iter().zip(&im).map(|(&a, &b)| Complex::new(a, b)).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let max_steps = 80.min(n);
    let mut basis: Vec<Vec<Complex<T>>> = vec![q];
    let mut alpha: Vec<T> = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut last = T::zero();
    for step in 0..max_steps {
        let mut v = gram(&basis[step])?;
        alpha.push(dot(&basis[step], &v).re);
        for b in basis.iter() {
            for _ in 0..2 {
                let h = dot(b, &v);
                for (vi, &bi) in v.iter_mut().zip(b.iter()) {
                    *vi -= bi * h;
                }
            }
        }
        let b = norm(&v);
        let k = alpha.len();
        let tri = DMat::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i.abs_diff(j) == 1 {
                beta[i.min(j)]
            } else {
                T::zero()
            }
        });
        let top = *tri.symmetric_eigen().0.last().unwrap();
        let converged = step > 0 && (top - last).abs() <= rel_tol * top.abs();
        last = top;
        if converged || b <= T::epsilon() * top.abs() {
            break;
        }
        beta.push(b);
        basis.push(v.iter().map(|&x| x / b).collect());
    }
    Ok(last.max(T::zero()).sqrt())
}

/// ||w R(z) w|| with B* = w R(conj z) w reusing the factorization of R(z).
pub fn weighted_resolvent_norm_with<T: Real>(res: &Resolvent<T>, w: &[T], rel_tol: T, seed: u64) -> Result<T> {
    let gram = |x: &[Complex<T>]| -> Result<Vec<Complex<T>>> {
        let y: Vec<Complex<T>> = x.iter().zip(w).map(|(&a, &b)| a * b).collect();
        let y = res.apply(&y)?;
        let y: Vec<Complex<T>> = y.iter().zip(w).map(|(&a, &b)| a * (b * b)).collect();
        let y = res.apply_conjugate(&y)?;
        Ok(y.iter().zip(w).map(|(&a, &b)| a * b).collect())
    };
    top_singular_value(w.len(), gram, rel_tol, seed)
}

/// ||<r>^{-s} (op - z)^{-1} <r>^{-s}|| to relative accuracy 1e-3.
pub fn weighted_resolvent_norm<T: Real>(op: &LinearOperatorMatrix<T>, r: &[T], z: Complex<T>, s: T) -> Result<T> {
    require_self_adjoint(op)?;
    if z.im == T::zero() {
        return Err(Error::InvalidArgument("weighted resolvent norm needs Im z != 0".into()));
    }
    let res = Resolvent::new(&op.matrix, z, &[])?;
    weighted_resolvent_norm_with(&res, &radial_weight(r, s), T::lit(1e-5), 7)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LapFlag {
    /// Relative change below 5% over the last decade of eps.
    Plateau,
    /// Fitted exponent of norm ~ eps^{-p} at least 0.8.
    Blowup,
    Growing,
}

#[derive(Clone, Debug, Serialize)]
pub struct LapRow<T> {
    pub energy: T,
    pub eps: T,
    pub norm: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct LapVerdict<T> {
    pub energy: T,
    pub flag: LapFlag,
    /// Relative change of the norm between the two smallest-eps decades ends.
    pub rel_change: T,
    /// Least-squares exponent p of norm ~ eps^{-p} over the last decade.
    pub exponent: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct LapScan<T> {
    pub s: T,
    pub rows: Vec<LapRow<T>>,
    pub verdicts: Vec<LapVerdict<T>>,
}

fn classify<T: Real>(energy: T, eps: &[T], norms: &[T]) -> LapVerdict<T> {
    let n = eps.len();
    let last = n - 1;
    if n == 1 {
        return LapVerdict { energy, flag: LapFlag::Growing, rel_change: T::nan(), exponent: T::nan() };
    }
    // Points within the last decade, eps in [eps_min, 10 eps_min].
    let decade: Vec<usize> = (0..n).filter(|&k| eps[k] <= T::lit(10.0) * eps[last] * T::lit(1.0 + 1e-9)).collect();
    let first = decade.first().copied().unwrap_or(last - 1).min(last - 1);
    let rel_change = (norms[last] - norms[first]).abs() / norms[first];
    let pts: Vec<usize> = if decade.len() >= 2 { decade } else { vec![last - 1, last] };
    let xs: Vec<T> = pts.iter().map(|&k| -eps[k].ln()).collect();
    let ys: Vec<T> = pts.iter().map(|&k| norms[k].ln()).collect();
    let m = T::of_usize(xs.len());
    let (mx, my) = (xs.iter().copied().sum::<T>() / m, ys.iter().copied().sum::<T>() / m);
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let exponent = sxy / sxx;
    let spans_decade = eps[first] >= T::lit(10.0) * eps[last] * T::lit(1.0 - 1e-9);
    let flag = if exponent >= T::lit(0.8) {
        LapFlag::Blowup
    } else if spans_decade && rel_change < T::lit(0.05) {
        LapFlag::Plateau
    } else {
        LapFlag::Growing
    };
    LapVerdict { energy, flag, rel_change, exponent }
}

/// Weighted resolvent norms on energies x eps (eps decreasing), classified per
/// energy. (E, eps) pairs run in parallel.
pub fn lap_scan<T: Real>(op: &LinearOperatorMatrix<T>, r: &[T], energies: &[T], s: T, eps_grid: &[T]) -> Result<LapScan<T>> {
    require_self_adjoint(op)?;
    if eps_grid.is_empty() || eps_grid.windows(2).any(|w| !(w[1] < w[0])) || eps_grid.iter().any(|e| !(*e > T::zero())) {
        return Err(Error::InvalidArgument("eps grid must be positive and strictly decreasing".into()));
    }
    let w = radial_weight(r, s);
    let ordering = Ordering::best(&op.matrix);
    let pairs: Vec<(usize, usize)> = (0..energies.len()).flat_map(|e| (0..eps_grid.len()).map(move |k| (e, k))).collect();
    let norms: Vec<Result<T>> = pairs
        .par_iter()
        .map(|&(e, k)| {
            let z = Complex::new(energies[e], eps_grid[k]);
            let res = Resolvent::with_ordering(&op.matrix, &ordering, z, &[])?;
            weighted_resolvent_norm_with(&res, &w, T::lit(1e-5), 7)
        })
        .collect();
    let mut rows = Vec::with_capacity(pairs.len());
    for (&(e, k), v) in pairs.iter().zip(norms) {
        rows.push(LapRow { energy: energies[e], eps: eps_grid[k], norm: v? });
    }
    let verdicts = energies
        .iter()
        .enumerate()
        .map(|(e, &energy)| {
            let ns: Vec<T> = rows[e * eps_grid.len()..(e + 1) * eps_grid.len()].iter().map(|r| r.norm).collect();
            classify(energy, eps_grid, &ns)
        })
        .collect();
    Ok(LapScan { s, rows, verdicts })
}

/// Smooth bump: 1 on [lo, hi], 0 outside [lo - ramp, hi + ramp].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothBump {
    pub lo: f64,
    pub hi: f64,
    pub ramp: f64,
}

impl SmoothBump {
    pub fn eval(&self, x: f64) -> f64 {
        smooth_step((x - self.lo + self.ramp) / self.ramp) * smooth_step((self.hi + self.ramp - x) / self.ramp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    Dense { cap: usize },
    Chebyshev,
}

/// chi(op), either materialized from a full eigendecomposition or applied as a
/// Chebyshev series with sup-norm error <= 1e-6 on the Gershgorin interval.
#[derive(Clone, Debug)]
pub enum SpectralFilter<'a, T> {
    Dense(DMat<T>),
    Chebyshev { op: &'a Csr<T>, series: ChebyshevSeries },
}

impl<T: Real> SpectralFilter<'_, T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        match self {
            SpectralFilter::Dense(m) => m.matvec(x),
            SpectralFilter::Chebyshev { op, series } => series.apply(op, x),
        }
    }

    pub fn apply_complex(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let re: Vec<T> = x.iter().map(|v| v.re).collect();
        let im: Vec<T> = x.iter().map(|v| v.im).collect();
        let (a, b) = (self.apply(&re), self.apply(&im));
        a.into_iter().zip(b).map(|(p, q)| Complex::new(p, q)).collect()
    }

    /// Error bound of the approximation to chi (zero up to rounding when dense).
    pub fn error_bound(&self) -> f64 {
        match self {
            SpectralFilter::Dense(_) => 0.0,
            SpectralFilter::Chebyshev { series, .. } => series.error_bound,
        }
    }
}

pub fn spectral_filter<'a, T: Real>(
    op: &'a LinearOperatorMatrix<T>,
    chi: impl Fn(f64) -> f64,
    mode: FilterMode,
) -> Result<SpectralFilter<'a, T>> {
    require_self_adjoint(op)?;
    let n = op.dim();
    match mode {
        FilterMode::Dense { cap } => {
            if n > cap {
                return Err(Error::DenseCapExceeded { dim: n, cap });
            }
            let (vals, vecs) = op.matrix.to_dense().symmetric_eigen();
            let c: Vec<T> = vals.iter().map(|v| T::lit(chi(v.f64()))).collect();
            let scaled = DMat::from_fn(n, n, |i, k| vecs[(i, k)] * c[k]);
            let mut m = scaled.matmul(&vecs.transpose());
            m.symmetrize();
            Ok(SpectralFilter::Dense(m))
        }
        FilterMode::Chebyshev => {
            let (lo, hi) = op.matrix.gershgorin();
            let pad = T::lit(1e-9) * (T::one() + hi.abs().max(lo.abs()));
            let series = ChebyshevSeries::fit(&chi, (lo - pad).f64(), (hi + pad).f64(), 1e-6, 1 << 22)
                .ok_or(Error::NotConverged { residual: f64::NAN })?;
            Ok(SpectralFilter::Chebyshev { op: &op.matrix, series })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, ManifoldModel};
    use crate::operators::{assemble_p, assemble_pf, GridTag};

    fn dirichlet_1d(n: usize, len: f64) -> LinearOperatorMatrix<f64> {
        let dr = len / (n + 1) as f64;
        let c = 0.5 / (dr * dr);
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 2.0 * c));
            if i + 1 < n {
                t.push((i, i + 1, -c));
                t.push((i + 1, i, -c));
            }
        }
        LinearOperatorMatrix::square(Csr::from_triplets(n, n, t), GridTag::Tube, SymmetryClass::SelfAdjoint, vec![dr; n])
    }

    fn cvec(n: usize, seed: u64) -> Vec<Complex<f64>> {
        let a: Vec<f64> = start_vector(n, seed);
        let b: Vec<f64> = start_vector(n, seed + 99);
        a.into_iter().zip(b).map(|(x, y)| Complex::new(x, y)).collect()
    }

    #[test]
    fn dirichlet_eigenvalues_match_closed_form() {
        let (n, len) = (300, 10.0);
        let op = dirichlet_1d(n, len);
        let dr = len / (n + 1) as f64;
        let pairs = eigenpairs(&op, 0.3, 1.2, 50).unwrap();
        let expect: Vec<f64> = (1..=n)
            .map(|k| (1.0 - (k as f64 * std::f64::consts::PI * dr / len).cos()) / (dr * dr))
            .filter(|&e| (0.3..=1.2).contains(&e))
            .collect();
        assert_eq!(pairs.len(), expect.len());
        for ((e, v), x) in pairs.iter().zip(&expect) {
            assert!((e - x).abs() < 1e-10);
            let r: f64 = norm(&op.matrix.apply(v).iter().zip(v).map(|(a, b)| a - e * b).collect::<Vec<_>>());
            assert!(r <= 1e-8);
        }
        let shifted = LinearOperatorMatrix::square(
            op.matrix.add_scaled(1.0, &Csr::identity(n), 0.75),
            GridTag::Tube,
            SymmetryClass::SelfAdjoint,
            op.domain_weight.clone(),
        );
        let moved = eigenpairs(&shifted, 1.05, 1.95, 50).unwrap();
        for ((a, _), (b, _)) in pairs.iter().zip(&moved) {
            assert!((b - a - 0.75).abs() < 1e-10);
        }
    }

    #[test]
    fn default_model_has_no_deep_states() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 8.0, 30, 16, 1.0, 2.0);
        let p = assemble_p(&m, &g).unwrap();
        let (vals, _) = p.matrix.to_dense().symmetric_eigen();
        // The 1/2 r^{-2} short-range term and the cutoff keep P above min V~.
        assert!(vals[0] > -1.0);
        let deep = eigenpairs(&p, -50.0, -1.0 - 0.05, 10).unwrap();
        assert!(deep.is_empty());
    }

    #[test]
    fn resolvent_identities() {
        let op = dirichlet_1d(200, 8.0);
        let n = op.dim();
        let pairs = eigenpairs(&op, 0.0, 0.2, 20).unwrap();
        let (e, v) = &pairs[0];
        let z = Complex::new(0.0, 1.0);
        let x = resolvent_apply(&op, z, &crate::scalar::complexify(v)).unwrap();
        for (xi, vi) in x.iter().zip(v) {
            assert!((xi - Complex::new(*vi, 0.0) / (Complex::new(*e, 0.0) - z)).norm() < 1e-10);
        }
        let b = cvec(n, 3);
        let z1 = Complex::new(0.4, 0.2);
        let z2 = Complex::new(0.7, -0.1);
        let r1 = Resolvent::new(&op.matrix, z1, &[]).unwrap();
        let r2 = Resolvent::new(&op.matrix, z2, &[]).unwrap();
        let x1 = r1.apply(&b).unwrap();
        let ax: Vec<Complex<f64>> = op.matrix.apply(&x1);
        let resid: Vec<Complex<f64>> = ax.iter().zip(&x1).zip(&b).map(|((a, x), bb)| a - x * z1 - bb).collect();
        assert!(norm(&resid) <= 1e-10 * norm(&b));
        // R(z1) - R(z2) = (z1 - z2) R(z1) R(z2).
        let lhs: Vec<Complex<f64>> = x1.iter().zip(r2.apply(&b).unwrap()).map(|(a, c)| a - c).collect();
        let rhs: Vec<Complex<f64>> = r1.apply(&r2.apply(&b).unwrap()).unwrap().iter().map(|v| v * (z1 - z2)).collect();
        let d: Vec<Complex<f64>> = lhs.iter().zip(&rhs).map(|(a, c)| a - c).collect();
        assert!(norm(&d) <= 1e-8 * norm(&lhs));
        assert!(norm(&x1) <= norm(&b) / z1.im);
        // R(conj z) b = conj(R(z) conj b).
        let direct = Resolvent::new(&op.matrix, z1.conj(), &[]).unwrap().apply(&b).unwrap();
        let via = r1.apply_conjugate(&b).unwrap();
        let d: Vec<Complex<f64>> = direct.iter().zip(&via).map(|(a, c)| a - c).collect();
        assert!(norm(&d) <= 1e-10 * norm(&direct));
        assert!(matches!(
            Resolvent::new(&op.matrix, Complex::new(*e, 0.0), &[*e]),
            Err(Error::NearSingular { .. })
        ));
    }

    #[test]
    fn weighted_norm_bounds() {
        let op = dirichlet_1d(200, 8.0);
        let r: Vec<f64> = (0..200).map(|i| 8.0 * (i + 1) as f64 / 201.0).collect();
        let z = Complex::new(-3.0, 0.5);
        let d = z.norm(); // distance to the spectrum >= |z| since spectrum > 0
        let nrm = weighted_resolvent_norm(&op, &r, z, 0.7).unwrap();
        assert!(nrm <= 1.0 / d + 1e-3);
        let w = radial_weight(&r, 0.7);
        let probe: Vec<Complex<f64>> = w.iter().map(|&x| Complex::new(x, 0.0)).collect();
        let y = resolvent_apply(&op, z, &probe).unwrap();
        let wy: Vec<Complex<f64>> = y.iter().zip(&w).map(|(a, b)| a * b).collect();
        assert!(nrm >= norm(&wy) / (probe.len() as f64).sqrt() * (1.0 - 1e-6));
        let z = Complex::new(0.5, 0.05);
        let n1 = weighted_resolvent_norm(&op, &r, z, 1.0).unwrap();
        let n2 = weighted_resolvent_norm(&op, &r, z, 0.51).unwrap();
        assert!(n1 <= n2 * (1.0 + 1e-3));
    }

    #[test]
    fn blowup_at_eigenvalue_matches_rank_one_oracle() {
        let op = dirichlet_1d(150, 6.0);
        let r: Vec<f64> = (0..150).map(|i| 6.0 * (i + 1) as f64 / 151.0).collect();
        let (e, v) = eigenpairs(&op, 0.1, 0.2, 10).unwrap()[0].clone();
        let w = radial_weight(&r, 0.7);
        let wv: f64 = v.iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
        let eps = [1e-4, 1e-5, 1e-6];
        let scan = lap_scan(&op, &r, &[e], 0.7, &eps).unwrap();
        for row in &scan.rows {
            let oracle = wv / row.eps;
            assert!((row.norm - oracle).abs() / oracle < 0.05, "{} vs {}", row.norm, oracle);
        }
        assert_eq!(scan.verdicts[0].flag, LapFlag::Blowup);
    }

    #[test]
    fn large_eps_gives_inverse_eps() {
        let op = dirichlet_1d(100, 6.0);
        let r = vec![0.0; 100];
        let (_, hi) = op.matrix.gershgorin();
        let eps = 1e3 * hi;
        let scan = lap_scan(&op, &r, &[0.2, 1.0], 1.0, &[eps]).unwrap();
        for row in &scan.rows {
            assert!((row.norm * eps - 1.0).abs() < 2e-3);
        }
        assert_eq!(scan.rows.len(), 2);
    }

    #[test]
    fn filter_modes_agree() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 6.0, 24, 20, 1.0, 2.0);
        let p = assemble_pf(&m, &g).unwrap();
        assert!(p.dim() >= 500);
        let bump = SmoothBump { lo: 0.2, hi: 0.6, ramp: 0.3 };
        let dense = spectral_filter(&p, |x| bump.eval(x), FilterMode::Dense { cap: 6000 }).unwrap();
        let cheb = spectral_filter(&p, |x| bump.eval(x), FilterMode::Chebyshev).unwrap();
        assert!(cheb.error_bound() <= 1e-6);
        let x: Vec<f64> = start_vector(p.dim(), 5);
        let x: Vec<f64> = x.iter().map(|v| v / norm(&x)).collect();
        let (a, b) = (dense.apply(&x), cheb.apply(&x));
        let d: f64 = norm(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>());
        assert!(d <= 2e-6, "{d}");
        // chi(P) commutes with P.
        let c1 = p.matrix.apply(&a);
        let c2 = dense.apply(&p.matrix.apply(&x));
        let comm: f64 = norm(&c1.iter().zip(&c2).map(|(u, v)| u - v).collect::<Vec<_>>());
        assert!(comm <= 1e-6 * p.matrix.max_abs());
        assert!(norm(&a) <= 1.0 + 1e-6);
        // chi = 1 is the identity; chi below the spectrum vanishes.
        let id = spectral_filter(&p, |_| 1.0, FilterMode::Dense { cap: 6000 }).unwrap().apply(&x);
        assert!(id.iter().zip(&x).all(|(u, v)| (u - v).abs() < 1e-6));
        let low = SmoothBump { lo: -40.0, hi: -30.0, ramp: 1.0 };
        let z = spectral_filter(&p, |x| low.eval(x), FilterMode::Chebyshev).unwrap().apply(&x);
        assert!(norm(&z) < 1e-6);
        assert!(matches!(
            spectral_filter(&p, |x| bump.eval(x), FilterMode::Dense { cap: 10 }),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn window_conflicts() {
        let mut w = SpectralWindow::from_interval(0.2, 0.4, 0.05);
        w.exclusions = vec![-1.0, 1.0];
        assert!(w.is_clean());
        w.exclusions.push(0.43);
        assert_eq!(w.conflicts(), vec![0.43]);
        assert_eq!(w.energy_grid(10).len(), 10);
    }
}
