use crate::error::{Error, Result};
use crate::geometry::{cutoff_j, cutoff_j_deriv, cutoff_j_tilde, GridSpec, Layout, ManifoldModel};
use crate::linalg::sparse::Csr;
use crate::operators::flux::{assemble_flux, Flux};
use crate::operators::{GridTag, LinearOperatorMatrix, SymmetryClass};
use crate::scalar::Real;

/// Cone quadrature weights G(r, th) dr dth in flat node order.
pub fn cone_weight<T: Real>(model: &ManifoldModel<T>, layout: &Layout<T>) -> Vec<T> {
    let cell = layout.dr * layout.dtheta;
    layout.nodes().map(|(r, t)| model.density_g(r, t) * cell).collect()
}

/// Tube quadrature weights H(th) dr dth.
pub fn tube_weight<T: Real>(model: &ManifoldModel<T>, layout: &Layout<T>) -> Vec<T> {
    let cell = layout.dr * layout.dtheta;
    layout.nodes().map(|(_, t)| model.density.eval(t) * cell).collect()
}

fn inv_sqrt<T: Real>(w: &[T]) -> Vec<T> {
    w.iter().map(|x| x.sqrt().recip()).collect()
}

/// W^{-1/2} K W^{-1/2} + diag(v), symmetrized exactly.
fn scaled_operator<T: Real>(k: &Csr<T>, weight: &[T], v: &[T]) -> Csr<T> {
    let s = inv_sqrt(weight);
    k.scale_rows_cols(Some(&s), Some(&s))
        .add_scaled(T::one(), &Csr::diag(v), T::one())
        .symmetrized()
}

fn check_model_grid<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<()> {
    model.validate()?;
    grid.validate(model.dim)
}

fn cone_flux<T: Real>(model: &ManifoldModel<T>, r: T, t: T) -> Flux<T> {
    let g = model.density_g(r, t);
    let half = T::lit(0.5);
    Flux {
        rr: half * g * model.a1(r, t),
        rt: g * model.a2.eval(r, t) / r,
        tt: half * g * model.a3(r, t) / (r * r),
    }
}

/// P = -1/2 G^{-1} (d_r, d_th/r) G [a] (d_r, d_th/r)^T + V on the cone.
pub fn assemble_p<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<LinearOperatorMatrix<T>> {
    check_model_grid(model, grid)?;
    let lay = grid.cone();
    for (r, t) in lay.nodes() {
        model.eval_coefficients(r, t)?;
    }
    let k = assemble_flux(&lay, |r, t| cone_flux(model, r, t));
    let w = cone_weight(model, &lay);
    let v: Vec<T> = lay.nodes().map(|(r, t)| model.potential(r, t)).collect();
    Ok(LinearOperatorMatrix::square(scaled_operator(&k, &w, &v), GridTag::Cone, SymmetryClass::SelfAdjoint, w))
}

/// P_f = -1/2 d_r^2 - (j~/2) H^{-1} d_th H h d_th + V~ on the tube.
pub fn assemble_pf<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<LinearOperatorMatrix<T>> {
    check_model_grid(model, grid)?;
    let lay = grid.tube();
    let half = T::lit(0.5);
    let k = assemble_flux(&lay, |r, t| {
        let hd = model.density.eval(t);
        Flux { rr: half * hd, rt: T::zero(), tt: half * hd * model.metric.eval(t) * cutoff_j_tilde(r) }
    });
    let w = tube_weight(model, &lay);
    let v: Vec<T> = lay.nodes().map(|(_, t)| model.v_tilde.eval(t)).collect();
    Ok(LinearOperatorMatrix::square(scaled_operator(&k, &w, &v), GridTag::Tube, SymmetryClass::SelfAdjoint, w))
}

fn identification<T: Real>(
    model: &ManifoldModel<T>,
    grid: &GridSpec<T>,
    profile: impl Fn(T) -> T,
) -> Result<LinearOperatorMatrix<T>> {
    check_model_grid(model, grid)?;
    let (cone, tube) = (grid.cone(), grid.tube());
    if cone.theta != tube.theta {
        return Err(Error::GridMismatch("cone and tube angular grids differ".into()));
    }
    let off = grid.tube_offset();
    if (tube.r[off] - cone.r[0]).abs() > T::lit(1e-9) * (T::one() + cone.r[0].abs()) {
        return Err(Error::GridMismatch("tube and cone radial nodes do not coincide".into()));
    }
    let mut trips = Vec::new();
    for (i, &r) in cone.r.iter().enumerate() {
        let v = profile(r);
        if v != T::zero() {
            for k in 0..cone.n_theta() {
                trips.push((cone.idx(i, k), tube.idx(i + off, k), v));
            }
        }
    }
    // In scaled coordinates r^{-(n-1)/2} cancels against sqrt(G / H).
    Ok(LinearOperatorMatrix {
        matrix: Csr::from_triplets(cone.len(), tube.len(), trips),
        domain: GridTag::Tube,
        codomain: GridTag::Cone,
        class: SymmetryClass::Rectangular,
        domain_weight: tube_weight(model, &tube),
        codomain_weight: cone_weight(model, &cone),
    })
}

/// (J f)(r, th) = r^{-(n-1)/2} j(r) f(r, th), tube to cone.
pub fn assemble_j<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<LinearOperatorMatrix<T>> {
    identification(model, grid, cutoff_j)
}

/// (J~ f)(r, th) = r^{-(n-1)/2} j'(r) f(r, th).
pub fn assemble_j_tilde<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<LinearOperatorMatrix<T>> {
    identification(model, grid, cutoff_j_deriv)
}

/// Antisymmetric scaled parts of the generator: S_lambda = radial + angular / lambda.
#[derive(Clone, Debug)]
pub struct ConjugateGenerator<T> {
    pub radial: Csr<T>,
    pub angular: Csr<T>,
    pub tag: GridTag,
    pub weight: Vec<T>,
}

impl<T: Real> ConjugateGenerator<T> {
    /// A_lambda = S_lambda / (2i).
    pub fn at(&self, lambda: T) -> Result<LinearOperatorMatrix<T>> {
        if !(lambda > T::zero()) {
            return Err(Error::InvalidLambda(lambda.f64()));
        }
        let s = self.radial.add_scaled(T::one(), &self.angular, lambda.recip());
        Ok(LinearOperatorMatrix::square(s, self.tag, SymmetryClass::SkewToSelfAdjoint, self.weight.clone()))
    }
}

/// X = j r d_r - (1/lambda) j V~' h d_th with centered differences; S = X_s - X_s^T
/// in the scaled representation gives the weighted (X - X^*), so A = S / (2i)
/// carries the divergence term of the symmetrized generator.
pub fn conjugate_generator<T: Real>(
    model: &ManifoldModel<T>,
    grid: &GridSpec<T>,
    target: GridTag,
) -> Result<ConjugateGenerator<T>> {
    check_model_grid(model, grid)?;
    let (lay, weight) = match target {
        GridTag::Cone => {
            let l = grid.cone();
            let w = cone_weight(model, &l);
            (l, w)
        }
        GridTag::Tube => {
            let l = grid.tube();
            let w = tube_weight(model, &l);
            (l, w)
        }
    };
    let (nr, nt) = (lay.n_r(), lay.n_theta());
    let two = T::lit(2.0);
    let mut xr = Vec::new();
    let mut xt = Vec::new();
    for i in 0..nr {
        let r = lay.r[i];
        let j = cutoff_j(r);
        if j == T::zero() {
            continue;
        }
        for k in 0..nt {
            let a = lay.idx(i, k);
            let cr = j * r / (two * lay.dr);
            if i + 1 < nr {
                xr.push((a, lay.idx(i + 1, k), cr));
            }
            if i > 0 {
                xr.push((a, lay.idx(i - 1, k), -cr));
            }
            if nt > 1 {
                let t = lay.theta[k];
                let ct = -j * model.v_tilde.deriv(t) * model.metric.eval(t) / (two * lay.dtheta);
                if ct != T::zero() {
                    xt.push((a, lay.idx(i, (k + 1) % nt), ct));
                    xt.push((a, lay.idx(i, (k + nt - 1) % nt), -ct));
                }
            }
        }
    }
    let n = lay.len();
    let sq: Vec<T> = weight.iter().map(|w| w.sqrt()).collect();
    let isq = inv_sqrt(&weight);
    let skew = |trips: Vec<(usize, usize, T)>| {
        let x = Csr::from_triplets(n, n, trips).scale_rows_cols(Some(&sq), Some(&isq));
        x.add_scaled(T::one(), &x.transpose(), -T::one())
    };
    Ok(ConjugateGenerator { radial: skew(xr), angular: skew(xt), tag: target, weight })
}

/// Self-adjoint A_lambda (cone) or A_f (tube), stored as S with A = S / (2i).
pub fn assemble_a<T: Real>(
    model: &ManifoldModel<T>,
    grid: &GridSpec<T>,
    lambda: T,
    target: GridTag,
) -> Result<LinearOperatorMatrix<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidLambda(lambda.f64()));
    }
    conjugate_generator(model, grid, target)?.at(lambda)
}

/// i[P, S/(2i)] = (P S - S P) / 2 = sym(P S), exactly symmetric.
pub fn commutator_matrix<T: Real>(p: &Csr<T>, s: &Csr<T>) -> Csr<T> {
    p.matmul(s).symmetrized()
}

/// i[P, A] for A stored as S / (2i).
pub fn assemble_commutator<T: Real>(
    p: &LinearOperatorMatrix<T>,
    a: &LinearOperatorMatrix<T>,
) -> Result<LinearOperatorMatrix<T>> {
    if p.domain != a.domain || p.dim() != a.dim() || p.domain_weight != a.domain_weight {
        return Err(Error::GridMismatch("P and A live on different grids".into()));
    }
    if p.class != SymmetryClass::SelfAdjoint || a.class != SymmetryClass::SkewToSelfAdjoint {
        return Err(Error::InvalidArgument("commutator expects (self-adjoint, skew) operands".into()));
    }
    Ok(LinearOperatorMatrix::square(
        commutator_matrix(&p.matrix, &a.matrix),
        p.domain,
        SymmetryClass::SelfAdjoint,
        p.domain_weight.clone(),
    ))
}

/// Commutator split as C_lambda = radial + angular / lambda.
#[derive(Clone, Debug)]
pub struct SplitCommutator<T> {
    pub radial: Csr<T>,
    pub angular: Csr<T>,
}

impl<T: Real> SplitCommutator<T> {
    pub fn new(p: &Csr<T>, gen: &ConjugateGenerator<T>) -> Self {
        SplitCommutator { radial: commutator_matrix(p, &gen.radial), angular: commutator_matrix(p, &gen.angular) }
    }

    pub fn at(&self, lambda: T) -> Csr<T> {
        self.radial.add_scaled(T::one(), &self.angular, lambda.recip())
    }
}

/// Coefficients (b_rr, b_rt, b_tt) of the bracket symbol {p - V, a_lambda}
/// = b_rr xi_r^2 + b_rt xi_r xi_th + b_tt xi_th^2.
fn bracket_symbol<T: Real>(model: &ManifoldModel<T>, lambda: T, r: T, t: T) -> (T, T, T) {
    let half = T::lit(0.5);
    let (j, dj) = (cutoff_j(r), cutoff_j_deriv(r));
    let (vp, vpp) = (model.v_tilde.deriv(t), model.v_tilde.deriv2(t));
    let (h, hp) = (model.metric.eval(t), model.metric.deriv(t));
    let il = lambda.recip();
    let al_r = j * r;
    let dr_al_r = dj * r + j;
    let al_t = -il * j * vp * h;
    let dr_al_t = -il * dj * vp * h;
    let dt_al_t = -il * j * (vpp * h + vp * hp);
    let a1 = model.a1(r, t);
    let (a1_r, a1_t) = (model.a1_pert.d_r(r, t), model.a1_pert.d_theta(r, t));
    let a2 = model.a2.eval(r, t);
    let (a2_r, a2_t) = (model.a2.d_r(r, t), model.a2.d_theta(r, t));
    let a3 = model.a3(r, t);
    let (a3_r, a3_t) = (model.a3_pert.d_r(r, t), hp + model.a3_pert.d_theta(r, t));
    let (g12, g22) = (a2 / r, a3 / (r * r));
    let g12_r = a2_r / r - a2 / (r * r);
    let g22_r = a3_r / (r * r) - T::lit(2.0) * a3 / (r * r * r);
    let b_rr = a1 * dr_al_r - half * al_r * a1_r - half * al_t * a1_t;
    let b_rt = a1 * dr_al_t + g12 * dr_al_r + g12 * dt_al_t - al_r * g12_r - al_t * a2_t / r;
    let b_tt = g12 * dr_al_t + g22 * dt_al_t - half * al_r * g22_r - half * al_t * a3_t / (r * r);
    (b_rr, b_rt, b_tt)
}

/// Operator predicted for i[P, A_lambda] by the bracket symbol: the flux-form
/// realization of the principal part, minus alpha . grad V, minus the angular
/// ordering correction (1/4) d_th^2 b_tt. Exact to discretization order where
/// j = 1 and the metric is flat.
pub fn commutator_prediction<T: Real>(
    model: &ManifoldModel<T>,
    grid: &GridSpec<T>,
    lambda: T,
) -> Result<LinearOperatorMatrix<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidLambda(lambda.f64()));
    }
    check_model_grid(model, grid)?;
    let lay = grid.cone();
    let k = assemble_flux(&lay, |r, t| {
        let g = model.density_g(r, t);
        let (b_rr, b_rt, b_tt) = bracket_symbol(model, lambda, r, t);
        Flux { rr: g * b_rr, rt: g * b_rt, tt: g * b_tt }
    });
    let step = T::epsilon().powf(T::lit(0.25));
    let diag: Vec<T> = lay
        .nodes()
        .map(|(r, t)| {
            let j = cutoff_j(r);
            let al_r = j * r;
            let al_t = -j * model.v_tilde.deriv(t) * model.metric.eval(t) / lambda;
            let (vr, vt) = model.potential_grad(r, t);
            let b = |s: T| bracket_symbol(model, lambda, r, s).2;
            let b_tt_2 = (b(t + step) - T::lit(2.0) * b(t) + b(t - step)) / (step * step);
            -al_r * vr - al_t * vt - T::lit(0.25) * b_tt_2
        })
        .collect();
    let w = cone_weight(model, &lay);
    Ok(LinearOperatorMatrix::square(scaled_operator(&k, &w, &diag), GridTag::Cone, SymmetryClass::SelfAdjoint, w))
}

/// Weighted decay norms max_col <r>^s |column| of the pieces of PJ - JP_f.
#[derive(Clone, Debug)]
pub struct DecayCertificate<T> {
    pub exponent: T,
    pub norms: Vec<(&'static str, T)>,
}

/// PJ - JP_f as a matrix product and assembled term by term.
#[derive(Clone, Debug)]
pub struct Difference<T> {
    pub product: LinearOperatorMatrix<T>,
    pub termwise: LinearOperatorMatrix<T>,
    pub terms: Vec<(&'static str, Csr<T>)>,
    pub certificate: DecayCertificate<T>,
}

/// Term-by-term PJ - JP_f in the scaled representation:
///
/// ```text
/// -1/2 (J~ d_r + d_r J~)
/// + ((n-1)^2 - 2(n-1)) / (8 r^2) J
/// - 1/2 G^{-1} grad . G [[a1 - 1, a2], [a2, a3 - r^2 j~ h]] grad J
/// + V_s J
/// ```
///
/// The first-order term uses j' at the half nodes so both forms agree to
/// second order on smooth states.
pub fn assemble_difference<T: Real>(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<Difference<T>> {
    let p = assemble_p(model, grid)?;
    let pf = assemble_pf(model, grid)?;
    let j = assemble_j(model, grid)?;
    let product = p.matrix.matmul(&j.matrix).add_scaled(T::one(), &j.matrix.matmul(&pf.matrix), -T::one());

    let (cone, tube) = (grid.cone(), grid.tube());
    let off = grid.tube_offset();
    let (nc, ntb) = (cone.len(), tube.len());
    let nt = cone.n_theta();
    let half = T::lit(0.5);
    let mut d_trips = Vec::new();
    let mut curv_trips = Vec::new();
    let mut vs_trips = Vec::new();
    let nm1 = T::of_usize(model.dim) - T::one();
    let c_curv = (nm1 * nm1 - T::lit(2.0) * nm1) / T::lit(8.0);
    for (i, &r) in cone.r.iter().enumerate() {
        let m = i + off;
        let (jp_hi, jp_lo) = (cutoff_j_deriv(r + half * cone.dr), cutoff_j_deriv(r - half * cone.dr));
        let jr = cutoff_j(r);
        for k in 0..nt {
            let a = cone.idx(i, k);
            if m + 1 < tube.n_r() && jp_hi != T::zero() {
                d_trips.push((a, tube.idx(m + 1, k), -half * jp_hi / cone.dr));
            }
            if jp_lo != T::zero() {
                d_trips.push((a, tube.idx(m - 1, k), half * jp_lo / cone.dr));
            }
            if jr != T::zero() {
                curv_trips.push((a, tube.idx(m, k), c_curv / (r * r) * jr));
                let vs = model.v_s.eval(r, cone.theta[k]);
                if vs != T::zero() {
                    vs_trips.push((a, tube.idx(m, k), vs * jr));
                }
            }
        }
    }
    let k_def = assemble_flux(&cone, |r, t| {
        let f = cone_flux(model, r, t);
        let g = model.density_g(r, t);
        Flux {
            rr: f.rr - half * g,
            rt: f.rt,
            tt: f.tt - half * g * cutoff_j_tilde(r) * model.metric.eval(t),
        }
    });
    let s = inv_sqrt(&p.domain_weight);
    let metric = k_def.scale_rows_cols(Some(&s), Some(&s)).matmul(&j.matrix);
    let terms = vec![
        ("cutoff_derivative", Csr::from_triplets(nc, ntb, d_trips)),
        ("curvature", Csr::from_triplets(nc, ntb, curv_trips)),
        ("metric_defect", metric),
        ("short_range", Csr::from_triplets(nc, ntb, vs_trips)),
    ];
    let mut termwise = Csr::zeros(nc, ntb);
    for (_, t) in &terms {
        termwise = termwise.add_scaled(T::one(), t, T::one());
    }

    let exponent = model.min_decay().unwrap_or(T::lit(2.0)).min(T::lit(2.0)) - T::lit(0.01);
    let col_r = tube.node_r();
    let norms = terms
        .iter()
        .map(|(name, t)| {
            let mut col = vec![T::zero(); ntb];
            for (_, c, v) in t.triplets() {
                col[c] += v * v;
            }
            let worst = col
                .iter()
                .zip(&col_r)
                .map(|(s2, &r)| (T::one() + r * r).sqrt().powf(exponent) * s2.sqrt())
                .fold(T::zero(), T::max);
            (*name, worst)
        })
        .collect();

    let wrap = |m: Csr<T>| LinearOperatorMatrix {
        matrix: m,
        domain: GridTag::Tube,
        codomain: GridTag::Cone,
        class: SymmetryClass::Rectangular,
        domain_weight: j.domain_weight.clone(),
        codomain_weight: j.codomain_weight.clone(),
    };
    Ok(Difference {
        product: wrap(product),
        termwise: wrap(termwise),
        terms,
        certificate: DecayCertificate { exponent, norms },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Trig;
    use crate::operators::{to_physical, to_scaled};
    use crate::scalar::dot;
    use std::f64::consts::PI;

    fn grid(n_r: usize, n_t: usize, r_max: f64) -> GridSpec<f64> {
        GridSpec::new(0.25, r_max, n_r, n_t, 2.0, 2.0)
    }

    fn radial_1d(n: usize, r_max: f64) -> GridSpec<f64> {
        let mut g = GridSpec::new(0.25, r_max, n, 1, 2.0, 2.0);
        g.n_theta = 1;
        g
    }

    fn quad(m: &Csr<f64>, u: &[f64]) -> f64 {
        dot(u, &m.apply(u))
    }

    #[test]
    fn p_is_symmetric_with_psd_kinetic_part() {
        let m = ManifoldModel::<f64>::default_model();
        let g = grid(12, 8, 4.0);
        let p = assemble_p(&m, &g).unwrap();
        assert!(p.weighted_symmetry_defect() <= 1e-12);
        let v: Vec<f64> = g.cone().nodes().map(|(r, t)| m.potential(r, t)).collect();
        let kin = p.matrix.add_scaled(1.0, &Csr::diag(&v), -1.0);
        let (vals, _) = kin.to_dense().symmetric_eigen();
        assert!(vals[0] > 0.0);
    }

    #[test]
    fn flat_free_ground_state_is_positive() {
        let m = ManifoldModel::<f64>::flat(2);
        let p = assemble_p(&m, &grid(12, 8, 5.0)).unwrap();
        let (vals, _) = p.matrix.to_dense().symmetric_eigen();
        assert!(vals[0] > 0.0);
    }

    #[test]
    fn angular_potential_is_the_only_difference_from_flat() {
        let m = ManifoldModel::<f64>::flat(2).with_v_tilde(Trig::cosine(2, 1.0));
        let g = grid(16, 8, 6.0);
        let diff = assemble_p(&m, &g).unwrap().matrix.add_scaled(1.0, &assemble_p(&ManifoldModel::flat(2), &g).unwrap().matrix, -1.0);
        let lay = g.cone();
        for (i, j, v) in diff.triplets() {
            assert_eq!(i, j);
            let (r, t) = (lay.node_r()[i], lay.node_theta()[i]);
            assert!((v - cutoff_j(2.0 * r) * (2.0 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_operator_matches_dirichlet_ladder() {
        // theta-constant states: P_f reduces to -1/2 d_r^2 on the tube.
        let m = ManifoldModel::<f64>::flat(2);
        let g = grid(40, 8, 6.0);
        let pf = assemble_pf(&m, &g).unwrap();
        let tube = g.tube();
        let n = tube.n_r();
        let dr = tube.dr;
        let len = (n + 1) as f64 * dr;
        for kk in 1..=3 {
            let u: Vec<f64> = tube
                .nodes()
                .map(|(r, _)| (kk as f64 * PI * (r - tube.r_lo) / len).sin())
                .collect();
            let pu = pf.apply(&u);
            let e = (1.0 - (kk as f64 * PI * dr / len).cos()) / (dr * dr);
            for (a, b) in pu.iter().zip(&u) {
                assert!((a - e * b).abs() < 1e-9);
            }
            let cont = 0.5 * (kk as f64 * PI / len).powi(2);
            assert!((e - cont).abs() < 0.05 * cont * (kk * kk) as f64 * dr * dr * 10.0);
        }
    }

    #[test]
    fn reference_angular_coupling() {
        let m = ManifoldModel::<f64>::flat(2);
        let g = grid(40, 8, 6.0);
        let pf = assemble_pf(&m, &g).unwrap().physical();
        let tube = g.tube();
        let dth2 = tube.dtheta * tube.dtheta;
        for (i, &r) in tube.r.iter().enumerate() {
            let c = -pf.get(tube.idx(i, 0), tube.idx(i, 1)) * dth2;
            if r.abs() >= 1.0 {
                assert!((c - 1.0 / (2.0 * r * r)).abs() < 1e-12);
            } else if r.abs() <= 0.5 {
                assert!((c - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identification_properties() {
        let m = ManifoldModel::<f64>::default_model();
        let g = grid(30, 8, 6.0);
        let j = assemble_j(&m, &g).unwrap();
        let jt = assemble_j_tilde(&m, &g).unwrap();
        let tube = g.tube();
        let pick = |pred: &dyn Fn(f64) -> bool| -> Vec<f64> {
            tube.nodes().map(|(r, t)| if pred(r) { 1.0 + 0.2 * t.sin() + r } else { 0.0 }).collect()
        };
        let inner = pick(&|r| r < 0.5);
        assert!(j.apply(&inner).iter().all(|v| *v == 0.0));
        assert!(jt.apply(&inner).iter().all(|v| *v == 0.0));
        let outer = pick(&|r| r > 1.0);
        assert!(jt.apply(&outer).iter().all(|v| *v == 0.0));
        // Physical norms: ||J f||_H = ||f||_{H_f} for f supported in r > 1.
        let f = outer.clone();
        let jf = j.physical().apply(&f);
        let n_cone: f64 = jf.iter().zip(&j.codomain_weight).map(|(x, w)| w * x * x).sum();
        let n_tube: f64 = f.iter().zip(&j.domain_weight).map(|(x, w)| w * x * x).sum();
        assert!((n_cone - n_tube).abs() < 1e-10 * n_tube);
        // J* J = j^2 on the tube.
        let jsj = j.adjoint().matrix.matmul(&j.matrix);
        for (a, b, v) in jsj.triplets() {
            assert_eq!(a, b);
            assert!((v - cutoff_j(tube.node_r()[a]).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn identification_adjoint_duality() {
        let m = ManifoldModel::<f64>::default_model();
        let g = grid(20, 8, 5.0);
        let j = assemble_j(&m, &g).unwrap();
        let jp = j.physical();
        let jsp = j.adjoint().physical();
        let x: Vec<f64> = (0..j.matrix.ncols).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..j.matrix.nrows).map(|i| (i as f64 * 1.3).cos()).collect();
        let lhs: f64 = jp.apply(&x).iter().zip(&y).zip(&j.codomain_weight).map(|((a, b), w)| a * b * w).sum();
        let rhs: f64 = x.iter().zip(&jsp.apply(&y)).zip(&j.domain_weight).map(|((a, b), w)| a * b * w).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn generator_is_exactly_skew() {
        let m = ManifoldModel::<f64>::default_model();
        let g = grid(16, 16, 6.0);
        for tag in [GridTag::Cone, GridTag::Tube] {
            let a = assemble_a(&m, &g, 10.0, tag).unwrap();
            assert!(a.weighted_symmetry_defect() <= 1e-12);
        }
        assert!(matches!(assemble_a(&m, &g, 0.0, GridTag::Cone), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn constant_potential_generator_is_radial_dilation() {
        // A f = (j r f' + (j r f)' + (n-1) j f) / (2i), checked on the scaled form.
        let m = ManifoldModel::<f64>::flat(2).with_v_tilde(Trig::constant(0.3));
        let err = |n: usize| {
            let g = grid(n, 8, 8.0);
            let a = assemble_a(&m, &g, 1.0, GridTag::Cone).unwrap();
            let lay = g.cone();
            let f = |r: f64| (-(r - 4.0) * (r - 4.0)).exp();
            let df = |r: f64| -2.0 * (r - 4.0) * f(r);
            let phys: Vec<f64> = lay.nodes().map(|(r, _)| f(r)).collect();
            let u = to_scaled(&phys, &a.domain_weight);
            let su = a.apply(&u);
            let mut worst: f64 = 0.0;
            for (idx, (r, _)) in lay.nodes().enumerate() {
                let (j, dj) = (cutoff_j(r), cutoff_j_deriv(r));
                let exact = 2.0 * j * r * df(r) + (dj * r + j) * f(r) + j * f(r);
                worst = worst.max((su[idx] / a.domain_weight[idx].sqrt() - exact).abs());
            }
            worst
        };
        let (e1, e2) = (err(60), err(120));
        assert!(e1 < 0.2 && e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn dilation_identity_on_radial_reduction() {
        let m = ManifoldModel::<f64>::flat(1);
        let ratio = |n: usize| {
            let g = radial_1d(n, 10.25);
            let p = assemble_p(&m, &g).unwrap();
            let a = assemble_a(&m, &g, 1.0, GridTag::Cone).unwrap();
            let c = assemble_commutator(&p, &a).unwrap();
            let u: Vec<f64> = g.cone().r.iter().map(|&r| (-(r - 5.0).powi(2) * 2.0).exp() * (1.3 * r).cos()).collect();
            quad(&c.matrix, &u) / quad(&p.matrix, &u)
        };
        let (r1, r2) = (ratio(200), ratio(400));
        assert!((r1 - 2.0).abs() < 0.02 && (r2 - 2.0).abs() < (r1 - 2.0).abs() / 3.0, "{r1} {r2}");
    }

    #[test]
    fn potential_bracket_on_angular_part() {
        let lambda = 2.0;
        let m = ManifoldModel::<f64>::flat(2).with_v_tilde(Trig::cosine(2, 1.0));
        let err = |nt: usize| {
            let g = grid(40, nt, 8.0);
            let gen = conjugate_generator(&m, &g, GridTag::Cone).unwrap();
            let lay = g.cone();
            let v: Vec<f64> = lay.nodes().map(|(r, t)| m.potential(r, t)).collect();
            let c = commutator_matrix(&Csr::diag(&v), &gen.angular).scaled(1.0 / lambda);
            let u: Vec<f64> = lay
                .nodes()
                .map(|(r, t)| (-(r - 4.0).powi(2)).exp() * (1.0 + 0.5 * t.cos() + 0.3 * (3.0 * t).sin()))
                .collect();
            let expect: f64 = lay
                .nodes()
                .zip(&u)
                .map(|((r, t), x)| cutoff_j(r) * (2.0 * (2.0 * t).sin()).powi(2) / lambda * x * x)
                .sum();
            (quad(&c, &u) - expect).abs() / expect
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e1 < 5e-2 && e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn commutator_matches_bracket_prediction() {
        let lambda = 1.0;
        let m = ManifoldModel::<f64>::flat(2).with_v_tilde(Trig::cosine(2, 1.0));
        let err = |n: usize| {
            let g = grid(n, n, 8.25);
            let p = assemble_p(&m, &g).unwrap();
            let a = assemble_a(&m, &g, lambda, GridTag::Cone).unwrap();
            let c = assemble_commutator(&p, &a).unwrap();
            assert!(c.weighted_symmetry_defect() <= 1e-12);
            let pred = commutator_prediction(&m, &g, lambda).unwrap();
            let lay = g.cone();
            let u: Vec<f64> = lay
                .nodes()
                .map(|(r, t)| (-(r - 4.5).powi(2)).exp() * (1.0 + 0.5 * t.cos() + 0.3 * (2.0 * t).sin()))
                .collect();
            let u = to_scaled(&u, &p.domain_weight);
            let (qc, qp) = (quad(&c.matrix, &u), quad(&pred.matrix, &u));
            (qc - qp).abs() / qc.abs()
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 2e-2 && e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn difference_forms_agree_at_second_order() {
        // The cutoff's fourth derivative reaches ~4e4, so the asymptotic
        // regime starts near dr = 0.02.
        for model in [
            ManifoldModel::<f64>::flat(2),
            ManifoldModel::default_model(),
            ManifoldModel::flat_short_range(0.5),
        ] {
            let err = |n: usize| {
                let g = GridSpec::new(0.25, 4.25, n - 1, 8, 2.0, 2.0);
                let d = assemble_difference(&model, &g).unwrap();
                let f: Vec<f64> = g
                    .tube()
                    .nodes()
                    .map(|(r, t)| (-(r - 1.5).powi(2)).exp() * (1.0 + 0.4 * t.cos()))
                    .collect();
                let u = to_scaled(&f, &d.product.domain_weight);
                let a = to_physical(&d.product.apply(&u), &d.product.codomain_weight);
                let b = to_physical(&d.termwise.apply(&u), &d.product.codomain_weight);
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            };
            let (e1, e2) = (err(200), err(400));
            let order = (e1 / e2).log2();
            assert!(order > 1.7, "{e1} {e2} {order}");
        }
    }

    #[test]
    fn difference_far_from_cutoff_is_curvature_for_flat_model() {
        // For r > 1 on the flat free model the difference acts as -1/(8 r^2) J.
        let m = ManifoldModel::<f64>::flat(2);
        let g = GridSpec::new(0.25, 12.25, 240, 8, 2.0, 2.0);
        let d = assemble_difference(&m, &g).unwrap();
        let tube = g.tube();
        let u: Vec<f64> = tube.nodes().map(|(r, _)| (-(r - 6.0).powi(2)).exp()).collect();
        let out = d.product.apply(&u);
        let cone = g.cone();
        let off = g.tube_offset();
        for (i, &r) in cone.r.iter().enumerate() {
            if (4.0..8.0).contains(&r) {
                let expect = -1.0 / (8.0 * r * r) * u[tube.idx(i + off, 0)];
                assert!((out[cone.idx(i, 0)] - expect).abs() < 1e-3, "{r}");
            }
        }
        assert!(d.certificate.norms.iter().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn f32_assembly_is_symmetric() {
        let m = ManifoldModel::<f32>::default_model();
        let g = GridSpec::<f32>::new(0.25, 4.0, 12, 8, 2.0, 2.0);
        let p = assemble_p(&m, &g).unwrap();
        assert!(p.weighted_symmetry_defect() <= 1e-4);
    }
}
