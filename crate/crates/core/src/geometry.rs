//! Model manifold: cutoffs, angular profiles, metric coefficients, potentials
//! and the discretization grid of the cone and of the reference tube.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// C-infinity step: 0 for x <= 0, 1 for x >= 1, built from glued e^{-1/x}.
pub fn smooth_step<T: Real>(x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let a = (-x.recip()).exp();
    let b = (-(T::one() - x).recip()).exp();
    a / (a + b)
}

pub fn smooth_step_deriv<T: Real>(x: T) -> T {
    if x <= T::zero() || x >= T::one() {
        return T::zero();
    }
    let s = smooth_step(x);
    let y = T::one() - x;
    s * (T::one() - s) * (x * x).recip() + s * (T::one() - s) * (y * y).recip()
}

/// The cutoff j: 0 for |r| <= 1/2, 1 for |r| >= 1, monotone in between.
pub fn cutoff_j<T: Real>(r: T) -> T {
    smooth_step(T::lit(2.0) * r.abs() - T::one())
}

/// d j / d r (odd in r).
pub fn cutoff_j_deriv<T: Real>(r: T) -> T {
    let d = T::lit(2.0) * smooth_step_deriv(T::lit(2.0) * r.abs() - T::one());
    if r < T::zero() {
        -d
    } else {
        d
    }
}

/// The positive profile j~: 1 for |r| <= 1/2, 1/r^2 for |r| >= 1.
pub fn cutoff_j_tilde<T: Real>(r: T) -> T {
    let t = smooth_step(T::lit(2.0) * r.abs() - T::one());
    if t == T::zero() {
        return T::one();
    }
    (T::one() - t) + t / (r * r)
}

/// Real trigonometric polynomial c0 + sum_k (cos_k cos(k th) + sin_k sin(k th)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct Trig<T> {
    pub c0: T,
    #[serde(default)]
    pub cos: Vec<T>,
    #[serde(default)]
    pub sin: Vec<T>,
}

impl<T: Real> Trig<T> {
    pub fn constant(c0: T) -> Self {
        Trig { c0, cos: vec![], sin: vec![] }
    }

    /// amp * cos(k th).
    pub fn cosine(k: usize, amp: T) -> Self {
        let mut cos = vec![T::zero(); k];
        cos[k - 1] = amp;
        Trig { c0: T::zero(), cos, sin: vec![] }
    }

    fn sum(&self, order: u32, th: T) -> T {
        let mut v = if order == 0 { self.c0 } else { T::zero() };
        // d^m/dth^m of cos(k th) cycles cos -> -sin -> -cos -> sin.
        for (idx, &c) in self.cos.iter().enumerate() {
            let k = T::of_usize(idx + 1);
            let (s, co) = (k * th).sin_cos();
            let km = k.powi(order as i32);
            v += c * km * match order % 4 {
                0 => co,
                1 => -s,
                2 => -co,
                _ => s,
            };
        }
        for (idx, &c) in self.sin.iter().enumerate() {
            let k = T::of_usize(idx + 1);
            let (s, co) = (k * th).sin_cos();
            let km = k.powi(order as i32);
            v += c * km * match order % 4 {
                0 => s,
                1 => co,
                2 => -s,
                _ => -co,
            };
        }
        v
    }

    pub fn eval(&self, th: T) -> T {
        self.sum(0, th)
    }

    pub fn deriv(&self, th: T) -> T {
        self.sum(1, th)
    }

    pub fn deriv2(&self, th: T) -> T {
        self.sum(2, th)
    }

    pub fn deriv3(&self, th: T) -> T {
        self.sum(3, th)
    }

    /// Upper bound sum of |coefficients|.
    pub fn abs_bound(&self) -> T {
        self.c0.abs() + self.cos.iter().chain(&self.sin).map(|c| c.abs()).sum::<T>()
    }

    pub fn is_constant(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|c| *c == T::zero())
    }
}

/// Short-range term amp * r^{-mu} * j(r) * angular(th).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decaying<T> {
    pub amp: T,
    pub mu: T,
    pub angular: Trig<T>,
}

impl<T: Real> Decaying<T> {
    pub fn zero() -> Self {
        Decaying { amp: T::zero(), mu: T::lit(2.0), angular: Trig::constant(T::one()) }
    }

    pub fn radial(amp: T, mu: T) -> Self {
        Decaying { amp, mu, angular: Trig::constant(T::one()) }
    }

    pub fn is_zero(&self) -> bool {
        self.amp == T::zero()
    }

    fn profile(&self, r: T) -> (T, T) {
        if self.amp == T::zero() {
            return (T::zero(), T::zero());
        }
        let p = r.powf(-self.mu);
        let j = cutoff_j(r);
        (p * j, -self.mu * p / r * j + p * cutoff_j_deriv(r))
    }

    pub fn eval(&self, r: T, th: T) -> T {
        self.amp * self.profile(r).0 * self.angular.eval(th)
    }

    pub fn d_r(&self, r: T, th: T) -> T {
        self.amp * self.profile(r).1 * self.angular.eval(th)
    }

    pub fn d_theta(&self, r: T, th: T) -> T {
        self.amp * self.profile(r).0 * self.angular.deriv(th)
    }

    /// Constant C in |term| <= C r^{-mu} for r >= 1.
    pub fn decay_constant(&self) -> T {
        self.amp.abs() * self.angular.abs_bound()
    }
}

/// Geometric and potential data of the cone model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldModel<T> {
    pub dim: usize,
    /// Boundary density H(th).
    pub density: Trig<T>,
    /// Boundary coefficient h(th) multiplying the angular derivatives.
    pub metric: Trig<T>,
    pub v_tilde: Trig<T>,
    pub v_s: Decaying<T>,
    pub a1_pert: Decaying<T>,
    pub a2: Decaying<T>,
    pub a3_pert: Decaying<T>,
    pub r_glue: T,
}

/// Pointwise coefficient values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients<T> {
    pub a1: T,
    pub a2: T,
    pub a3: T,
    pub v: T,
    pub g: T,
}

/// Critical points of V~ and their distinct values.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalSet<T> {
    pub points: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> ManifoldModel<T> {
    /// H = h = 1, no potential, no perturbation.
    pub fn flat(dim: usize) -> Self {
        ManifoldModel {
            dim,
            density: Trig::constant(T::one()),
            metric: Trig::constant(T::one()),
            v_tilde: Trig::constant(T::zero()),
            v_s: Decaying::zero(),
            a1_pert: Decaying::zero(),
            a2: Decaying::zero(),
            a3_pert: Decaying::zero(),
            r_glue: T::one(),
        }
    }

    /// V~ = cos 2th with r^{-2} metric perturbations and short-range potential.
    pub fn default_model() -> Self {
        let mut m = Self::flat(2);
        m.v_tilde = Trig::cosine(2, T::one());
        m.v_s = Decaying::radial(T::lit(0.5), T::lit(2.0));
        m.a1_pert = Decaying::radial(T::lit(0.1), T::lit(2.0));
        m.a2 = Decaying::radial(T::lit(0.05), T::lit(2.0));
        m.a3_pert = Decaying::radial(T::lit(0.1), T::lit(2.0));
        m
    }

    /// Flat metric, V~ = 0, V_s = c r^{-2} j(r).
    pub fn flat_short_range(c: T) -> Self {
        let mut m = Self::flat(2);
        m.v_s = Decaying::radial(c, T::lit(2.0));
        m
    }

    pub fn with_v_tilde(mut self, v: Trig<T>) -> Self {
        self.v_tilde = v;
        self
    }

    fn nm1(&self) -> T {
        T::of_usize(self.dim) - T::one()
    }

    /// Density G = r^{n-1} H(th).
    pub fn density_g(&self, r: T, th: T) -> T {
        r.powf(self.nm1()) * self.density.eval(th)
    }

    /// d_r log G and d_th log G.
    pub fn log_density_grad(&self, r: T, th: T) -> (T, T) {
        (self.nm1() / r, self.density.deriv(th) / self.density.eval(th))
    }

    pub fn a1(&self, r: T, th: T) -> T {
        T::one() + self.a1_pert.eval(r, th)
    }

    pub fn a3(&self, r: T, th: T) -> T {
        self.metric.eval(th) + self.a3_pert.eval(r, th)
    }

    /// V = j(2r) V~(th) + V_s(r, th).
    pub fn potential(&self, r: T, th: T) -> T {
        cutoff_j(T::lit(2.0) * r) * self.v_tilde.eval(th) + self.v_s.eval(r, th)
    }

    /// (d_r V, d_th V).
    pub fn potential_grad(&self, r: T, th: T) -> (T, T) {
        let two = T::lit(2.0);
        let dr = two * cutoff_j_deriv(two * r) * self.v_tilde.eval(th) + self.v_s.d_r(r, th);
        let dth = cutoff_j(two * r) * self.v_tilde.deriv(th) + self.v_s.d_theta(r, th);
        (dr, dth)
    }

    /// All coefficients at (r, th), with positivity checks.
    pub fn eval_coefficients(&self, r: T, th: T) -> Result<Coefficients<T>> {
        let g = self.density_g(r, th);
        if !(g > T::zero()) {
            return Err(Error::NonPositiveDensity { value: g.f64(), r: r.f64(), theta: th.f64() });
        }
        let a1 = self.a1(r, th);
        let a2 = self.a2.eval(r, th);
        let a3 = self.a3(r, th);
        if !(a1 > T::zero() && a1 * a3 - a2 * a2 > T::zero()) {
            return Err(Error::NonPositiveDefinite { r: r.f64(), theta: th.f64() });
        }
        Ok(Coefficients { a1, a2, a3, v: self.potential(r, th), g })
    }

    /// Structural checks: dimension, decay exponents, H, h > 0 on a dense
    /// sample, and a positive definite coefficient block on sampled radii.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidModel("dim must be at least 1".into()));
        }
        for (name, term) in [
            ("v_s", &self.v_s),
            ("a1_pert", &self.a1_pert),
            ("a2", &self.a2),
            ("a3_pert", &self.a3_pert),
        ] {
            if !term.is_zero() && !(term.mu > T::one()) {
                return Err(Error::InvalidModel(format!("{name}: decay exponent must exceed 1")));
            }
        }
        if !(self.r_glue > T::zero()) {
            return Err(Error::InvalidModel("r_glue must be positive".into()));
        }
        let samples = 720;
        for k in 0..samples {
            let th = T::lit(std::f64::consts::TAU * k as f64 / samples as f64);
            if !(self.density.eval(th) > T::zero()) {
                return Err(Error::InvalidModel(format!("H not positive at theta = {}", th.f64())));
            }
            if !(self.metric.eval(th) > T::zero()) {
                return Err(Error::InvalidModel(format!("h not positive at theta = {}", th.f64())));
            }
            if k % 10 == 0 {
                for r in [0.3, 0.5, 0.7, 0.85, 1.0, 1.5, 3.0, 10.0] {
                    self.eval_coefficients(T::lit(r), th)?;
                }
            }
        }
        Ok(())
    }

    /// Smallest decay exponent among the nonzero short-range terms.
    pub fn min_decay(&self) -> Option<T> {
        [&self.v_s, &self.a1_pert, &self.a2, &self.a3_pert]
            .iter()
            .filter(|t| !t.is_zero())
            .map(|t| t.mu)
            .fold(None, |m, mu| Some(m.map_or(mu, |x: T| x.min(mu))))
    }

    /// Critical values of V~ by sign changes of V~' on `samples` points
    /// refined by bisection.
    pub fn critical_values(&self, samples: usize, cap: usize) -> Result<CriticalSet<T>> {
        if samples < 64 {
            return Err(Error::InvalidArgument("critical_values needs at least 64 samples".into()));
        }
        let v = &self.v_tilde;
        if v.is_constant() {
            return Ok(CriticalSet { points: vec![], values: vec![v.c0] });
        }
        let step = T::TAU() / T::of_usize(samples);
        let th = |k: usize| step * T::of_usize(k);
        let d: Vec<T> = (0..samples).map(|k| v.deriv(th(k))).collect();
        let scale = d.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let zero_tol = T::lit(64.0) * T::epsilon() * scale;
        let tol = T::lit(1e-10).max(T::lit(4.0) * T::epsilon());
        let mut points = Vec::new();
        for k in 0..samples {
            let (d0, d1) = (d[k], d[(k + 1) % samples]);
            if d0.abs() <= zero_tol {
                points.push(th(k));
            } else if d1.abs() > zero_tol && (d0 < T::zero()) != (d1 < T::zero()) {
                let (mut lo, mut hi) = (th(k), th(k) + step);
                let lo_neg = d0 < T::zero();
                while hi - lo > tol {
                    let mid = T::lit(0.5) * (lo + hi);
                    if (v.deriv(mid) < T::zero()) == lo_neg {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                points.push(T::lit(0.5) * (lo + hi));
            }
            if points.len() > cap {
                return Err(Error::TooManyCritical { cap });
            }
        }
        let mut values: Vec<T> = points.iter().map(|&p| v.eval(p)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-8));
        Ok(CriticalSet { points, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BoundaryCondition {
    #[default]
    Dirichlet,
}

/// Uniform grid on (r_min, r_max) x S^1 and on the tube (tube_r_min, r_max) x S^1.
/// Radial nodes are interior points of a uniform partition with Dirichlet
/// ghosts at both ends; the tube shares the spacing and the outer wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub r_min: T,
    pub r_max: T,
    pub n_r: usize,
    pub n_theta: usize,
    pub tube_r_min: T,
    pub tube_r_max: T,
    /// Largest energy the grid must resolve.
    pub e_max: T,
    #[serde(default)]
    pub boundary: BoundaryCondition,
}

/// Radial/angular layout of one of the two grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout<T> {
    pub r: Vec<T>,
    pub theta: Vec<T>,
    pub dr: T,
    pub dtheta: T,
    pub r_lo: T,
    pub r_hi: T,
}

impl<T: Real> Layout<T> {
    pub fn n_r(&self) -> usize {
        self.r.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn len(&self) -> usize {
        self.r.len() * self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, theta fastest.
    pub fn idx(&self, i: usize, k: usize) -> usize {
        i * self.theta.len() + k
    }

    /// (r, th) of every node in flat order.
    pub fn nodes(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.r.iter().flat_map(move |&r| self.theta.iter().map(move |&t| (r, t)))
    }

    /// Radius of each node in flat order.
    pub fn node_r(&self) -> Vec<T> {
        self.nodes().map(|(r, _)| r).collect()
    }

    pub fn node_theta(&self) -> Vec<T> {
        self.nodes().map(|(_, t)| t).collect()
    }
}

impl<T: Real> GridSpec<T> {
    /// Cone (r_min, r_max) with a tube reaching `tube_extent` below zero.
    pub fn new(r_min: T, r_max: T, n_r: usize, n_theta: usize, tube_extent: T, e_max: T) -> Self {
        let dr = (r_max - r_min) / T::of_usize(n_r + 1);
        let steps = ((r_min + tube_extent) / dr).ceil();
        GridSpec {
            r_min,
            r_max,
            n_r,
            n_theta,
            tube_r_min: r_min - steps * dr,
            tube_r_max: r_max,
            e_max,
            boundary: BoundaryCondition::Dirichlet,
        }
    }

    pub fn dr(&self) -> T {
        (self.r_max - self.r_min) / T::of_usize(self.n_r + 1)
    }

    pub fn dtheta(&self) -> T {
        T::TAU() / T::of_usize(self.n_theta)
    }

    /// Number of tube nodes below the first cone node.
    pub fn tube_offset(&self) -> usize {
        ((self.r_min - self.tube_r_min) / self.dr()).round().to_usize().unwrap_or(0)
    }

    pub fn theta_nodes(&self) -> Vec<T> {
        let dth = self.dtheta();
        (0..self.n_theta).map(|k| dth * T::of_usize(k)).collect()
    }

    pub fn cone(&self) -> Layout<T> {
        let dr = self.dr();
        Layout {
            r: (0..self.n_r).map(|i| self.r_min + dr * T::of_usize(i + 1)).collect(),
            theta: self.theta_nodes(),
            dr,
            dtheta: self.dtheta(),
            r_lo: self.r_min,
            r_hi: self.r_max,
        }
    }

    pub fn tube(&self) -> Layout<T> {
        let dr = self.dr();
        let n = self.n_r + self.tube_offset();
        Layout {
            r: (0..n).map(|m| self.tube_r_min + dr * T::of_usize(m + 1)).collect(),
            theta: self.theta_nodes(),
            dr,
            dtheta: self.dtheta(),
            r_lo: self.tube_r_min,
            r_hi: self.r_max,
        }
    }

    /// Largest admissible spacing pi / (4 sqrt(2 E_max)).
    pub fn dr_limit(&self) -> T {
        T::PI() / (T::lit(4.0) * (T::lit(2.0) * self.e_max).sqrt())
    }

    /// Checks the invariants; `dim` = 1 admits the radial reduction n_theta = 1.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let half = T::lit(0.5);
        if !(self.r_min > T::zero() && self.r_min < half && self.r_max > T::one()) {
            return Err(Error::InvalidGrid("need 0 < r_min < 1/2 < 1 < r_max".into()));
        }
        if self.n_r < 8 {
            return Err(Error::InvalidGrid("n_r must be at least 8".into()));
        }
        if self.n_theta < 8 && !(dim == 1 && self.n_theta == 1) {
            return Err(Error::InvalidGrid("n_theta must be at least 8".into()));
        }
        if !(self.tube_r_min < T::zero()) {
            return Err(Error::InvalidGrid("tube_r_min must be negative".into()));
        }
        if self.tube_r_max != self.r_max {
            return Err(Error::GridMismatch("tube and cone must share the outer wall".into()));
        }
        let dr = self.dr();
        let steps = (self.r_min - self.tube_r_min) / dr;
        if (steps - steps.round()).abs() > T::lit(1e-6) {
            return Err(Error::GridMismatch("tube radial nodes do not align with the cone".into()));
        }
        if !(self.e_max > T::zero()) {
            return Err(Error::InvalidGrid("e_max must be positive".into()));
        }
        let limit = self.dr_limit();
        if dr > limit {
            return Err(Error::GridTooCoarse { dr: dr.f64(), limit: limit.f64(), e_max: self.e_max.f64() });
        }
        Ok(())
    }
}
