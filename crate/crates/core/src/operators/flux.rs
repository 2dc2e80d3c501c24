use rayon::prelude::*;

use crate::geometry::Layout;
use crate::linalg::sparse::Csr;
use crate::scalar::Real;

/// Flux coefficients of a quadratic form
/// Q(f) = int [k_rr |d_r f|^2 + k_rt d_r f d_th f + k_tt |d_th f|^2] dr dth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flux<T> {
    pub rr: T,
    pub rt: T,
    pub tt: T,
}

type Stencil<T> = Vec<(usize, T)>;

fn push_square<T: Real>(out: &mut Vec<(usize, usize, T)>, c: T, l: &Stencil<T>) {
    if c == T::zero() {
        return;
    }
    for &(a, la) in l {
        for &(b, lb) in l {
            out.push((a, b, c * la * lb));
        }
    }
}

fn push_mixed<T: Real>(out: &mut Vec<(usize, usize, T)>, c: T, l1: &Stencil<T>, l2: &Stencil<T>) {
    if c == T::zero() {
        return;
    }
    let half = T::lit(0.5) * c;
    for &(a, la) in l1 {
        for &(b, lb) in l2 {
            out.push((a, b, half * la * lb));
            out.push((b, a, half * la * lb));
        }
    }
}

/// Symmetric matrix K with f^T K f equal to the summation-by-parts
/// discretization of Q: radial differences on faces (i+1/2, k) including the
/// Dirichlet ghosts, angular differences on faces (i, k+1/2), and the mixed
/// term at cell corners with averaged gradients. `coeff` is sampled at the
/// face or corner position.
pub fn assemble_flux<T: Real>(layout: &Layout<T>, coeff: impl Fn(T, T) -> Flux<T> + Sync) -> Csr<T> {
    let (nr, nt) = (layout.n_r(), layout.n_theta());
    let (dr, dth) = (layout.dr, layout.dtheta);
    let cell = dr * dth;
    let half = T::lit(0.5);
    let node = |i: isize, k: usize| -> Option<usize> {
        (i >= 0 && (i as usize) < nr).then(|| i as usize * nt + k % nt)
    };
    let r_at = |i: isize| layout.r_lo + dr * T::lit((i + 1) as f64);
    let trips: Vec<(usize, usize, T)> = (-1..nr as isize)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut out = Vec::new();
            let r_face = r_at(i) + half * dr;
            for k in 0..nt {
                let th = layout.theta[k];
                let th_face = th + half * dth;
                // Radial face between nodes i and i+1.
                let mut lr: Stencil<T> = Vec::with_capacity(2);
                if let Some(a) = node(i + 1, k) {
                    lr.push((a, dr.recip()));
                }
                if let Some(b) = node(i, k) {
                    lr.push((b, -dr.recip()));
                }
                push_square(&mut out, cell * coeff(r_face, th).rr, &lr);
                if i >= 0 && nt > 1 {
                    let lt: Stencil<T> = vec![
                        (node(i, k + 1).unwrap(), dth.recip()),
                        (node(i, k).unwrap(), -dth.recip()),
                    ];
                    push_square(&mut out, cell * coeff(r_at(i), th_face).tt, &lt);
                }
                if nt > 1 {
                    let c = coeff(r_face, th_face).rt;
                    if c != T::zero() {
                        let gr_scale = half / dr;
                        let gt_scale = half / dth;
                        let mut g_r: Stencil<T> = Vec::with_capacity(4);
                        let mut g_t: Stencil<T> = Vec::with_capacity(4);
                        for kk in [k, k + 1] {
                            if let Some(a) = node(i + 1, kk) {
                                g_r.push((a, gr_scale));
                            }
                            if let Some(b) = node(i, kk) {
                                g_r.push((b, -gr_scale));
                            }
                        }
                        for ii in [i, i + 1] {
                            if let Some(a) = node(ii, k + 1) {
                                g_t.push((a, gt_scale));
                            }
                            if let Some(b) = node(ii, k) {
                                g_t.push((b, -gt_scale));
                            }
                        }
                        push_mixed(&mut out, cell * c, &g_r, &g_t);
                    }
                }
            }
            out
        })
        .collect();
    let n = layout.len();
    Csr::from_triplets(n, n, trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    fn quad(k: &Csr<f64>, f: &[f64]) -> f64 {
        k.apply(f).iter().zip(f).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn quadratic_form_matches_integral() {
        // f = sin(pi (r - r_lo) / L) (1 + 0.3 cos th) with constant coefficients.
        let oracle = |n: usize| {
            let g = GridSpec::new(0.25, 4.25, n, n, 1.0, 1.0);
            let lay = g.cone();
            let l = 4.0;
            let f: Vec<f64> = lay
                .nodes()
                .map(|(r, t)| (std::f64::consts::PI * (r - 0.25) / l).sin() * (1.0 + 0.3 * t.cos()))
                .collect();
            let k = assemble_flux(&lay, |_, _| Flux { rr: 1.0, rt: 0.2, tt: 0.5 });
            // int |d_r f|^2 = (pi/L)^2 L/2 * int (1+0.3cos)^2 = (pi^2/(2L)) (2pi + 0.09 pi)
            // int |d_th f|^2 = L/2 * 0.09 pi; the mixed term integrates to zero.
            let pi = std::f64::consts::PI;
            let exact = pi * pi / (2.0 * l) * (2.0 * pi + 0.09 * pi) + 0.5 * l / 2.0 * 0.09 * pi;
            (quad(&k, &f) - exact).abs()
        };
        let (e1, e2) = (oracle(32), oracle(64));
        assert!(e1 < 2e-2 && e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn flux_matrix_is_symmetric_psd() {
        let g = GridSpec::new(0.25, 3.0, 10, 8, 1.0, 1.0);
        let k = assemble_flux(&g.cone(), |r, t: f64| Flux { rr: 1.0 + 0.1 * r, rt: 0.1 * t.cos(), tt: 0.7 });
        assert!(k.symmetry_defect() < 1e-13);
        let (vals, _) = k.to_dense().symmetric_eigen();
        assert!(vals[0] > 0.0);
    }
}
