//! Positivity of the spectrally localized commutator modulo a spatially
//! localized remainder, its lambda dependence, the angular partition behind
//! it and a double-commutator regularity check.
//!
//! With chi(P) = V diag(c) V^T built from the eigenpairs of P in the window
//! fattened by eta, the estimate chi i[P,A] chi >= alpha chi^2 + K with
//! K = -kappa chi 1_B chi (B = {r <= R0} plus the outer wall layer) is
//! equivalent to C_F + kappa W_F >= alpha, where C_F = V^T C V and
//! W_F = V^T 1_B V, because diag(c) is invertible on the filtered space.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{smooth_step, GridSpec, ManifoldModel};
use crate::linalg::dense::DMat;
use crate::linalg::sparse::Csr;
use crate::operators::{assemble_p, conjugate_generator, GridTag, LinearOperatorMatrix, SplitCommutator, SymmetryClass};
use crate::scalar::Real;
use crate::spectral::{eigenpairs, top_singular_value, Resolvent, SmoothBump};

/// Parameters of the localized-remainder budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig<T> {
    /// Inner localization radius R0.
    pub r0: T,
    /// Width of the excluded layer at the outer wall.
    pub wall: T,
    /// Penalty weight kappa; the remainder is K = -kappa chi 1_B chi.
    pub kappa: T,
    /// Filtered directions with mass at least this in B count toward rank K.
    pub mass_tol: T,
    pub rank_cap: usize,
    /// Lowest eigendirections removed as an explicit low-rank correction.
    pub rank_correction: usize,
    pub tail_len: usize,
}

impl<T: Real> Default for BoundConfig<T> {
    fn default() -> Self {
        BoundConfig {
            r0: T::lit(2.0),
            wall: T::lit(6.0),
            kappa: T::lit(30.0),
            mass_tol: T::lit(1e-6),
            rank_cap: 40,
            rank_correction: 0,
            tail_len: 8,
        }
    }
}

/// Eigenpairs of P in (lo - eta, hi + eta) with the filter values c_k.
#[derive(Clone, Debug)]
pub struct FilteredSpace<T> {
    pub lo: T,
    pub hi: T,
    pub eta: T,
    pub energies: Vec<T>,
    pub vectors: Vec<Vec<T>>,
    pub chi: Vec<T>,
}

impl<T: Real> FilteredSpace<T> {
    pub fn new(p: &LinearOperatorMatrix<T>, lo: T, hi: T, eta: T, max_count: usize) -> Result<Self> {
        if !(lo < hi) || !(eta > T::zero()) {
            return Err(Error::InvalidArgument("window needs lo < hi and eta > 0".into()));
        }
        let pairs = eigenpairs(p, lo - eta, hi + eta, max_count)?;
        let bump = SmoothBump { lo: lo.f64(), hi: hi.f64(), ramp: eta.f64() };
        let chi = pairs.iter().map(|(e, _)| T::lit(bump.eval(e.f64()))).collect();
        let (energies, vectors) = pairs.into_iter().unzip();
        Ok(FilteredSpace { lo, hi, eta, energies, vectors, chi })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// V^T M V.
    pub fn project(&self, m: &Csr<T>) -> DMat<T> {
        let images: Vec<Vec<T>> = self.vectors.par_iter().map(|v| m.apply(v)).collect();
        self.gram(&images)
    }

    /// V^T diag(d) V.
    pub fn project_diag(&self, d: &[T]) -> DMat<T> {
        let images: Vec<Vec<T>> = self.vectors.iter().map(|v| v.iter().zip(d).map(|(&a, &b)| a * b).collect()).collect();
        self.gram(&images)
    }

    fn gram(&self, images: &[Vec<T>]) -> DMat<T> {
        let m = self.len();
        let mut out = DMat::from_fn(m, m, |i, j| {
            if j < i {
                T::zero()
            } else {
                self.vectors[i].iter().zip(&images[j]).map(|(&a, &b)| a * b).sum()
            }
        });
        for i in 0..m {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        out.symmetrize();
        out
    }

    fn lift(&self, coeffs: &[T]) -> Vec<T> {
        let n = self.vectors.first().map_or(0, |v| v.len());
        let mut x = vec![T::zero(); n];
        for (v, &c) in self.vectors.iter().zip(coeffs) {
            for (xi, &vi) in x.iter_mut().zip(v) {
                *xi += c * vi;
            }
        }
        x
    }
}

/// M = chi(P) i[P,A] chi(P) in factored form V diag(c) C_F diag(c) V^T.
#[derive(Clone, Debug)]
pub struct Compression<T> {
    pub space: FilteredSpace<T>,
    /// C_F = V^T i[P,A] V.
    pub block: DMat<T>,
}

impl<T: Real> Compression<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let s = &self.space;
        let coeffs: Vec<T> = s.vectors.iter().zip(&s.chi).map(|(v, &c)| c * v.iter().zip(x).map(|(&a, &b)| a * b).sum()).collect();
        let mixed = self.block.matvec(&coeffs);
        let scaled: Vec<T> = mixed.iter().zip(&s.chi).map(|(&a, &c)| a * c).collect();
        s.lift(&scaled)
    }

    /// Dense n x n matrix of M; only for small grids.
    pub fn to_dense(&self) -> DMat<T> {
        let n = self.space.vectors.first().map_or(0, |v| v.len());
        let cols: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                self.apply(&e)
            })
            .collect();
        DMat::from_fn(n, n, |i, j| cols[j][i])
    }

    /// max |M - M^T| relative to max |M| on the filtered block.
    pub fn symmetry_defect(&self) -> T {
        let b = &self.block;
        let mut d = T::zero();
        for i in 0..b.rows {
            for j in 0..b.cols {
                d = d.max((b[(i, j)] - b[(j, i)]).abs());
            }
        }
        d
    }
}

/// chi(P) i[P,A] chi(P) for the bump chi equal to 1 on (lo, hi), supported
/// in (lo - eta, hi + eta).
pub fn mourre_compression<T: Real>(
    p: &LinearOperatorMatrix<T>,
    commutator: &LinearOperatorMatrix<T>,
    lo: T,
    hi: T,
    eta: T,
    max_count: usize,
) -> Result<Compression<T>> {
    if p.dim() != commutator.dim() || p.domain_weight != commutator.domain_weight {
        return Err(Error::GridMismatch("P and i[P,A] live on different grids".into()));
    }
    if commutator.class != SymmetryClass::SelfAdjoint {
        return Err(Error::InvalidArgument("commutator must be self-adjoint".into()));
    }
    let space = FilteredSpace::new(p, lo, hi, eta, max_count)?;
    let block = space.project(&commutator.matrix);
    Ok(Compression { space, block })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KBudget<T> {
    pub r0: T,
    pub wall: T,
    pub kappa: T,
    pub mass_tol: T,
    /// Filtered directions with mass >= mass_tol in B.
    pub rank: usize,
    /// ||K|| = kappa ||W_F||.
    pub norm: T,
    pub rank_cap: usize,
    pub rank_correction: usize,
}

/// Filtered directions with mass < mass_tol in B and the commutator on them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FarSpace<T> {
    pub count: usize,
    pub alpha: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MourreReport<T> {
    pub window: (T, T),
    pub eta: T,
    pub lambda: Option<T>,
    pub filtered_states: usize,
    pub alpha_estimate: T,
    pub k_budget: KBudget<T>,
    /// Lowest eigenvalues of C_F + kappa W_F after the rank correction.
    pub tail_spectrum: Vec<T>,
    pub far_space: FarSpace<T>,
    /// Fraction of the minimizer's mass inside B.
    pub minimizer_excluded_mass: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionReport<T>>,
}

/// Indicator of B = {r <= R0} union {r >= r_max - wall} on the nodes.
pub fn excluded_indicator<T: Real>(r_nodes: &[T], r_max: T, cfg: &BoundConfig<T>) -> Vec<T> {
    r_nodes
        .iter()
        .map(|&r| if r <= cfg.r0 || r >= r_max - cfg.wall { T::one() } else { T::zero() })
        .collect()
}

fn bound_from_blocks<T: Real>(
    space: &FilteredSpace<T>,
    c_f: &DMat<T>,
    w_f: &DMat<T>,
    cfg: &BoundConfig<T>,
    lambda: Option<T>,
) -> Result<MourreReport<T>> {
    let m = space.len();
    if cfg.rank_correction > cfg.rank_cap {
        return Err(Error::InvalidArgument("rank_correction exceeds rank_cap".into()));
    }
    if m == 0 {
        return Err(Error::EmptyFarSpace);
    }
    let (mu, q) = w_f.symmetric_eigen();
    if mu[0] > T::one() - cfg.mass_tol {
        return Err(Error::EmptyFarSpace);
    }
    let rank = mu.iter().filter(|&&x| x >= cfg.mass_tol).count();
    let far: Vec<usize> = (0..m).filter(|&k| mu[k] < cfg.mass_tol).collect();
    let far_alpha = (!far.is_empty()).then(|| {
        let qf = DMat::from_fn(m, far.len(), |i, j| q[(i, far[j])]);
        let reduced = qf.transpose().matmul(c_f).matmul(&qf);
        reduced.symmetric_eigen().0[0]
    });
    let penalized = DMat::from_fn(m, m, |i, j| c_f[(i, j)] + cfg.kappa * w_f[(i, j)]);
    let (vals, vecs) = penalized.symmetric_eigen();
    if cfg.rank_correction >= m {
        return Err(Error::EmptyFarSpace);
    }
    let tail: Vec<T> = vals.iter().skip(cfg.rank_correction).take(cfg.tail_len.max(1)).copied().collect();
    let minimizer = vecs.col(cfg.rank_correction);
    let excluded_mass: T = w_f.matvec(&minimizer).iter().zip(&minimizer).map(|(&a, &b)| a * b).sum();
    Ok(MourreReport {
        window: (space.lo, space.hi),
        eta: space.eta,
        lambda,
        filtered_states: m,
        alpha_estimate: tail[0],
        k_budget: KBudget {
            r0: cfg.r0,
            wall: cfg.wall,
            kappa: cfg.kappa,
            mass_tol: cfg.mass_tol,
            rank,
            norm: cfg.kappa * mu[m - 1],
            rank_cap: cfg.rank_cap,
            rank_correction: cfg.rank_correction,
        },
        tail_spectrum: tail,
        far_space: FarSpace { count: far.len(), alpha: far_alpha },
        minimizer_excluded_mass: excluded_mass,
        partition: None,
    })
}

/// alpha = lambda_min(C_F + kappa W_F) past `rank_correction` directions.
pub fn mourre_bound<T: Real>(m: &Compression<T>, r_nodes: &[T], r_max: T, cfg: &BoundConfig<T>) -> Result<MourreReport<T>> {
    if r_nodes.len() != m.space.vectors.first().map_or(r_nodes.len(), |v| v.len()) {
        return Err(Error::GridMismatch("node radii do not match the compression".into()));
    }
    if !(cfg.r0 >= T::one()) {
        return Err(Error::InvalidArgument("R0 must be at least 1".into()));
    }
    let w_f = m.space.project_diag(&excluded_indicator(r_nodes, r_max, cfg));
    bound_from_blocks(&m.space, &m.block, &w_f, cfg, None)
}

/// Everything lambda-independent on one grid.
pub struct MourreSetup<T> {
    pub grid: GridSpec<T>,
    pub p: LinearOperatorMatrix<T>,
    pub space: FilteredSpace<T>,
    pub radial_block: DMat<T>,
    pub angular_block: DMat<T>,
    pub excluded_block: DMat<T>,
    pub r_nodes: Vec<T>,
    pub theta_nodes: Vec<T>,
}

impl<T: Real> MourreSetup<T> {
    pub fn new(
        model: &ManifoldModel<T>,
        grid: &GridSpec<T>,
        window: (T, T),
        eta: T,
        cfg: &BoundConfig<T>,
        max_count: usize,
    ) -> Result<Self> {
        let p = assemble_p(model, grid)?;
        let gen = conjugate_generator(model, grid, GridTag::Cone)?;
        let split = SplitCommutator::new(&p.matrix, &gen);
        let space = FilteredSpace::new(&p, window.0, window.1, eta, max_count)?;
        let lay = grid.cone();
        let r_nodes = lay.node_r();
        let excluded_block = space.project_diag(&excluded_indicator(&r_nodes, grid.r_max, cfg));
        Ok(MourreSetup {
            grid: grid.clone(),
            radial_block: space.project(&split.radial),
            angular_block: space.project(&split.angular),
            excluded_block,
            r_nodes,
            theta_nodes: lay.node_theta(),
            p,
            space,
        })
    }

    pub fn block_at(&self, lambda: T) -> DMat<T> {
        let il = lambda.recip();
        let (a, b) = (&self.radial_block, &self.angular_block);
        DMat::from_fn(a.rows, a.cols, |i, j| a[(i, j)] + il * b[(i, j)])
    }

    pub fn report(&self, lambda: T, cfg: &BoundConfig<T>) -> Result<MourreReport<T>> {
        if !(lambda > T::zero()) {
            return Err(Error::InvalidLambda(lambda.f64()));
        }
        bound_from_blocks(&self.space, &self.block_at(lambda), &self.excluded_block, cfg, Some(lambda))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaRow<T> {
    pub lambda: T,
    pub alpha: T,
    pub rank_k: usize,
    pub norm_k: T,
    pub alpha_refined: Option<T>,
    /// alpha > 0 on both grids and within 20% of each other.
    pub stable: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaScan<T> {
    pub rows: Vec<LambdaRow<T>>,
    pub lambda_threshold: Option<T>,
    pub filtered_states: usize,
    pub filtered_states_refined: Option<usize>,
}

/// Relative agreement used for refinement stability.
pub const STABILITY_TOL: f64 = 0.2;

pub fn is_stable<T: Real>(a: T, b: T) -> bool {
    a > T::zero() && b > T::zero() && (a - b).abs() <= T::lit(STABILITY_TOL) * a.abs().max(b.abs())
}

/// alpha(lambda) on `grid` and, if given, on `refined`; the threshold is the
/// smallest lambda with alpha > 0 stable under the refinement.
pub fn lambda_scan<T: Real>(
    model: &ManifoldModel<T>,
    grid: &GridSpec<T>,
    refined: Option<&GridSpec<T>>,
    window: (T, T),
    eta: T,
    cfg: &BoundConfig<T>,
    lambdas: &[T],
    max_count: usize,
) -> Result<LambdaScan<T>> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[0] < w[1])) || !(lambdas[0] > T::zero()) {
        return Err(Error::InvalidArgument("lambda grid must be positive and increasing".into()));
    }
    let base = MourreSetup::new(model, grid, window, eta, cfg, max_count)?;
    let fine = refined.map(|g| MourreSetup::new(model, g, window, eta, cfg, max_count)).transpose()?;
    lambda_scan_with(&base, fine.as_ref(), cfg, lambdas)
}

/// `lambda_scan` on prebuilt setups.
pub fn lambda_scan_with<T: Real>(
    base: &MourreSetup<T>,
    fine: Option<&MourreSetup<T>>,
    cfg: &BoundConfig<T>,
    lambdas: &[T],
) -> Result<LambdaScan<T>> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[0] < w[1])) || !(lambdas[0] > T::zero()) {
        return Err(Error::InvalidArgument("lambda grid must be positive and increasing".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let rep = base.report(lambda, cfg)?;
        let alpha_refined = fine.map(|f| f.report(lambda, cfg).map(|r| r.alpha_estimate)).transpose()?;
        rows.push(LambdaRow {
            lambda,
            alpha: rep.alpha_estimate,
            rank_k: rep.k_budget.rank,
            norm_k: rep.k_budget.norm,
            alpha_refined,
            stable: alpha_refined.map(|b| is_stable(rep.alpha_estimate, b)),
        });
    }
    let lambda_threshold = rows
        .iter()
        .find(|r| r.stable.unwrap_or(r.alpha > T::zero()))
        .map(|r| r.lambda);
    Ok(LambdaScan {
        rows,
        lambda_threshold,
        filtered_states: base.space.len(),
        filtered_states_refined: fine.map(|f| f.space.len()),
    })
}

/// Angular partition f_i = j(r) g_i(th), psi = 1 - j(r)^2, with
/// g_1^2 + g_2^2 + g_3^2 = 1 subordinate to
/// O1 = V~^{-1}(nu - tau - eta, nu + tau + eta), O2 = {V~ < nu - tau - eta/2},
/// O3 = {V~ > nu + tau + eta/2}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularPartition<T> {
    pub lo: T,
    pub hi: T,
    pub eta: T,
}

impl<T: Real> AngularPartition<T> {
    /// (g_1^2, g_2^2, g_3^2) at potential value v.
    pub fn squares(&self, v: T) -> [T; 3] {
        let half_eta = T::lit(0.5) * self.eta;
        let a = smooth_step((v - (self.lo - self.eta)) / half_eta);
        let b = smooth_step((v - (self.hi + half_eta)) / half_eta);
        [a - b, T::one() - a, b]
    }

    pub fn g(&self, v: T) -> [T; 3] {
        let s = self.squares(v);
        [s[0].max(T::zero()).sqrt(), s[1].sqrt(), s[2].sqrt()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport<T> {
    pub region: usize,
    /// Fraction of theta nodes in the support of g_i.
    pub support_fraction: T,
    /// delta / lambda for region 1, eta / 2 for region 2, none for region 3.
    pub predicted_bound: Option<T>,
    /// Lowest eigenvalue of V^T f C f V.
    pub form_min: T,
    /// Largest eigenvalue of V^T f^2 V.
    pub mass_max: T,
    /// Norm of the negative part of V^T f C f V.
    pub negative_part: T,
    /// Fraction of the most negative direction's f-weighted mass in r <= R0.
    pub negative_inner_fraction: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionReport<T> {
    pub lambda: T,
    /// min over supp g_1 of h (V~')^2.
    pub delta: Option<T>,
    /// max |sum f_i^2 + psi - 1| over the nodes.
    pub identity_defect: T,
    pub regions: Vec<RegionReport<T>>,
}

/// Per-region compressed forms of the commutator on the setup's filtered space.
pub fn partition_diagnostics<T: Real>(
    model: &ManifoldModel<T>,
    setup: &MourreSetup<T>,
    lambda: T,
    r0: T,
) -> Result<PartitionReport<T>> {
    let space = &setup.space;
    let part = AngularPartition { lo: space.lo, hi: space.hi, eta: space.eta };
    let thetas = setup.grid.theta_nodes();
    // Fine sampling decides whether a region exists; the grid decides whether it is resolved.
    let fine = 4096;
    let mut exists = [false; 3];
    for s in 0..fine {
        let th = T::TAU() * T::of_usize(s) / T::of_usize(fine);
        let sq = part.squares(model.v_tilde.eval(th));
        for i in 0..3 {
            exists[i] |= sq[i] > T::zero();
        }
    }
    let node_g: Vec<[T; 3]> = thetas.iter().map(|&th| part.g(model.v_tilde.eval(th))).collect();
    for i in 0..3 {
        if exists[i] && node_g.iter().all(|g| g[i] == T::zero()) {
            return Err(Error::DegeneratePartition { region: i + 1 });
        }
    }
    let delta = thetas
        .iter()
        .zip(&node_g)
        .filter(|(_, g)| g[0] > T::zero())
        .map(|(&th, _)| model.metric.eval(th) * model.v_tilde.deriv(th).powi(2))
        .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.min(v))));
    let nt = thetas.len();
    let f_nodes = |i: usize| -> Vec<T> {
        setup
            .r_nodes
            .iter()
            .enumerate()
            .map(|(a, &r)| crate::geometry::cutoff_j(r) * node_g[a % nt][i])
            .collect()
    };
    let mut identity_defect = T::zero();
    let (f1, f2, f3) = (f_nodes(0), f_nodes(1), f_nodes(2));
    for a in 0..setup.r_nodes.len() {
        let j = crate::geometry::cutoff_j(setup.r_nodes[a]);
        let total = f1[a] * f1[a] + f2[a] * f2[a] + f3[a] * f3[a] + (T::one() - j * j);
        identity_defect = identity_defect.max((total - T::one()).abs());
    }
    let gen = conjugate_generator(model, &setup.grid, GridTag::Cone)?;
    let c = SplitCommutator::new(&setup.p.matrix, &gen).at(lambda);
    let inner: Vec<T> = setup.r_nodes.iter().map(|&r| if r <= r0 { T::one() } else { T::zero() }).collect();
    let mut regions = Vec::new();
    for (i, f) in [f1, f2, f3].into_iter().enumerate() {
        if !exists[i] {
            continue;
        }
        let images: Vec<Vec<T>> = space.vectors.iter().map(|v| v.iter().zip(&f).map(|(&a, &b)| a * b).collect()).collect();
        let cimg: Vec<Vec<T>> = images.par_iter().map(|x| c.apply(x)).collect();
        let m = space.len();
        let form = DMat::from_fn(m, m, |p, q| images[p].iter().zip(&cimg[q]).map(|(&a, &b)| a * b).sum());
        let mut form = form;
        form.symmetrize();
        let mass = DMat::from_fn(m, m, |p, q| images[p].iter().zip(&images[q]).map(|(&a, &b)| a * b).sum());
        let (vals, vecs) = if m > 0 { form.symmetric_eigen() } else { (vec![T::zero()], DMat::zeros(1, 1)) };
        let mass_max = if m > 0 { *mass.symmetric_eigen().0.last().unwrap() } else { T::zero() };
        let negative_inner_fraction = if m > 0 && vals[0] < T::zero() {
            let coeffs = vecs.col(0);
            let n = f.len();
            let mut x = vec![T::zero(); n];
            for (img, &cf) in images.iter().zip(&coeffs) {
                for (xi, &v) in x.iter_mut().zip(img) {
                    *xi += cf * v;
                }
            }
            let total: T = x.iter().map(|v| *v * *v).sum();
            let near: T = x.iter().zip(&inner).map(|(v, w)| *v * *v * *w).sum();
            if total > T::zero() {
                near / total
            } else {
                T::zero()
            }
        } else {
            T::zero()
        };
        let support = node_g.iter().filter(|g| g[i] > T::zero()).count();
        regions.push(RegionReport {
            region: i + 1,
            support_fraction: T::of_usize(support) / T::of_usize(nt),
            predicted_bound: match i {
                0 => delta.map(|d| d / lambda),
                1 => Some(T::lit(0.5) * space.eta),
                _ => None,
            },
            form_min: vals[0],
            mass_max,
            negative_part: (-vals[0]).max(T::zero()),
            negative_inner_fraction,
        });
    }
    Ok(PartitionReport { lambda, delta, identity_defect, regions })
}

/// ||1_{r <= r_cut} [[P, A], A] (P + i)^{-1}|| for A = S / (2i), where
/// [[P, A], A] = -(C S - S C) / 2 with C = i[P, A]. The mask keeps the rows
/// away from the outer Dirichlet wall, which the dilation does not preserve.
pub fn double_commutator_norm<T: Real>(p: &LinearOperatorMatrix<T>, a: &LinearOperatorMatrix<T>, r_nodes: &[T], r_cut: T) -> Result<T> {
    if a.class != SymmetryClass::SkewToSelfAdjoint || a.dim() != p.dim() || r_nodes.len() != p.dim() {
        return Err(Error::InvalidArgument("expects P and A on one grid".into()));
    }
    let c = crate::operators::commutator_matrix(&p.matrix, &a.matrix);
    let s = &a.matrix;
    let half = T::lit(-0.5);
    let mask: Vec<T> = r_nodes.iter().map(|&r| if r <= r_cut { T::one() } else { T::zero() }).collect();
    let dc = |x: &[Complex<T>]| -> Vec<Complex<T>> {
        let csx: Vec<Complex<T>> = c.apply(&s.apply(x));
        let scx: Vec<Complex<T>> = s.apply(&c.apply(x));
        csx.iter().zip(&scx).map(|(u, v)| (u - v) * half).collect()
    };
    let res = Resolvent::new(&p.matrix, Complex::new(T::zero(), -T::one()), &[])?;
    // B = M D R(-i), B* = R(i) D M.
    let gram = |x: &[Complex<T>]| -> Result<Vec<Complex<T>>> {
        let y = dc(&res.apply(x)?);
        let y: Vec<Complex<T>> = y.iter().zip(&mask).map(|(&u, &w)| u * w).collect();
        res.apply_conjugate(&dc(&y))
    };
    top_singular_value(p.dim(), gram, T::lit(1e-4), 11)
}
