use num_complex::Complex;
use rustfft::FftPlanner;

use crate::linalg::sparse::Csr;
use crate::scalar::{Field, Real};

/// Chebyshev expansion of a scalar function on `[lo, hi]`:
/// f(x) = c0/2 + sum_k c_k T_k(y), y = (2x - lo - hi)/(hi - lo).
#[derive(Clone, Debug)]
pub struct ChebyshevSeries {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
    /// Bound on the sup-norm error of the truncated series on [lo, hi].
    pub error_bound: f64,
}

fn interpolation_coeffs(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    // DCT-II of the samples at Chebyshev-Gauss nodes through a length-2n FFT.
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); 2 * n];
    for j in 0..n {
        let y = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
        let x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * y;
        let v = f(x);
        buf[j] = Complex::new(v, 0.0);
        buf[2 * n - 1 - j] = Complex::new(v, 0.0);
    }
    let fft = FftPlanner::new().plan_fft_forward(2 * n);
    fft.process(&mut buf);
    (0..n)
        .map(|k| {
            let phase = Complex::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * n) as f64);
            (buf[k] * phase).re / n as f64
        })
        .collect()
}

impl ChebyshevSeries {
    /// Smallest series (degree doubling on the interpolation grid) whose
    /// coefficient-tail bound on the sup error is at most `tol`.
    pub fn fit(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, max_degree: usize) -> Option<Self> {
        let mut n = 64;
        loop {
            let c = interpolation_coeffs(&f, lo, hi, 2 * n);
            // Interpolant error is bounded by twice the tail it omits; the
            // upper half of the 2n coefficients measures that tail.
            let upper: f64 = c[n..].iter().map(|v| v.abs()).sum();
            if upper <= 0.25 * tol {
                let mut degree = n;
                let mut tail = upper;
                while degree > 1 && tail + c[degree - 1].abs() <= 0.5 * tol {
                    degree -= 1;
                    tail += c[degree].abs();
                }
                let mut coeffs = c[..degree].to_vec();
                coeffs[0] *= 0.5;
                return Some(ChebyshevSeries { lo, hi, coeffs, error_bound: 2.0 * upper + tail });
            }
            if 2 * n > max_degree {
                return None;
            }
            n *= 2;
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * y * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        y * b1 - b2 + self.coeffs[0]
    }

    /// p(A) x by the three-term recurrence on the affinely mapped operator.
    pub fn apply<T: Real, F: Field<T>>(&self, a: &Csr<T>, x: &[F]) -> Vec<F> {
        let n = x.len();
        let alpha = T::lit(2.0 / (self.hi - self.lo));
        let beta = T::lit(-(self.hi + self.lo) / (self.hi - self.lo));
        let map = |v: &[F]| -> Vec<F> {
            let av = a.apply(v);
            av.iter().zip(v).map(|(&p, &q)| p * alpha + q * beta).collect()
        };
        let c = |k: usize| T::lit(self.coeffs[k]);
        let mut out: Vec<F> = x.iter().map(|&v| v * c(0)).collect();
        if self.coeffs.len() == 1 {
            return out;
        }
        let mut t_prev: Vec<F> = x.to_vec();
        let mut t_cur = map(x);
        for i in 0..n {
            out[i] += t_cur[i] * c(1);
        }
        let two = T::lit(2.0);
        for k in 2..self.coeffs.len() {
            let mut t_next = map(&t_cur);
            for i in 0..n {
                t_next[i] = t_next[i] * two - t_prev[i];
                out[i] += t_next[i] * c(k);
            }
            t_prev = std::mem::replace(&mut t_cur, t_next);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_polynomial_exactly() {
        let s = ChebyshevSeries::fit(|x| 3.0 * x * x - x + 0.5, -1.0, 2.0, 1e-12, 4096).unwrap();
        for x in [-1.0, -0.3, 0.0, 1.1, 2.0] {
            assert!((s.eval(x) - (3.0 * x * x - x + 0.5)).abs() < 1e-11);
        }
    }

    #[test]
    fn error_bound_holds_for_smooth_bump() {
        let f = |x: f64| (-(x - 1.0) * (x - 1.0) * 4.0).exp();
        let s = ChebyshevSeries::fit(f, -2.0, 6.0, 1e-8, 1 << 16).unwrap();
        let worst = (0..4001)
            .map(|i| -2.0 + 8.0 * i as f64 / 4000.0)
            .map(|x| (s.eval(x) - f(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn matrix_apply_matches_scalar_on_diagonal() {
        let d = vec![0.1, 0.7, 1.9, 3.3];
        let a = Csr::diag(&d);
        let s = ChebyshevSeries::fit(|x| x.sin(), 0.0, 4.0, 1e-12, 4096).unwrap();
        let y = s.apply(&a, &[1.0f64; 4]);
        for (yi, di) in y.iter().zip(&d) {
            assert!((yi - di.sin()).abs() < 1e-11);
        }
    }
}
