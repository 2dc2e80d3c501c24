//! Time evolution under P and P_f, the Cook integrand, wave-operator
//! approximants, the completeness probe and angular localization statistics.
//!
//! States are complex vectors in the scaled representation, so the Euclidean
//! norm is the weighted L^2 norm. Evolution backwards in time is computed as
//! conj(e^{-itP} conj(u)), which for real symmetric P equals e^{itP} u.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, ManifoldModel};
use crate::linalg::banded::{Ordering, ShiftedSolver};
use crate::linalg::dense::DMat;
use crate::linalg::sparse::Csr;
use crate::operators::{assemble_difference, assemble_j, assemble_p, assemble_pf, GridTag, LinearOperatorMatrix};
use crate::scalar::{conj_vec, dot, norm, Real};
use crate::spectral::{spectral_filter, FilterMode, SmoothBump};

type C<T> = Complex<T>;

/// Spectrally filtered Gaussian packet.
#[derive(Clone, Debug)]
pub struct WavePacket<T> {
    pub grid: GridTag,
    pub state: Vec<C<T>>,
    pub r0: T,
    pub theta0: T,
    pub rho0: T,
    /// Energy interval holding the filtered spectral mass.
    pub window: (T, T),
    pub norm: T,
    /// Lower bound on the fraction of spectral mass inside `window`.
    pub window_mass: T,
}

/// Radial and angular widths; `theta: None` gives a theta-independent profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketWidths<T> {
    pub r: T,
    pub theta: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CrankNicolson,
    /// Krylov approximation of exp(-i dt P) with the given subspace size.
    LanczosExp { krylov_dim: usize },
}

/// Quadratic absorbing potential -i strength ((r - onset) / (r_max - onset))^2 for r > onset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap<T> {
    pub strength: T,
    pub onset: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig<T> {
    pub dt: T,
    pub horizon: T,
    pub scheme: Scheme,
    pub cap: Option<Cap<T>>,
}

/// Absorbed mass above which a run is no longer clean.
pub const CLEAN_ABSORPTION: f64 = 1e-4;

impl<T: Real> PropagationConfig<T> {
    pub fn crank_nicolson(dt: T, horizon: T, cap: Option<Cap<T>>) -> Self {
        PropagationConfig { dt, horizon, scheme: Scheme::CrankNicolson, cap }
    }

    pub fn validate(&self, grid: &GridSpec<T>) -> Result<()> {
        if !(self.dt > T::zero() && self.horizon >= T::zero()) {
            return Err(Error::InvalidArgument("dt must be positive and the horizon non-negative".into()));
        }
        if self.dt * grid.e_max > T::lit(0.5) {
            return Err(Error::InvalidArgument(format!(
                "dt * e_max = {} exceeds 0.5",
                (self.dt * grid.e_max).f64()
            )));
        }
        if let Some(cap) = self.cap {
            if !(cap.onset < grid.r_max - T::lit(10.0) * grid.dr()) {
                return Err(Error::InvalidArgument("absorber onset must lie 10 dr inside the outer wall".into()));
            }
            if !(cap.strength > T::zero()) {
                return Err(Error::InvalidArgument("absorber strength must be positive".into()));
            }
            if matches!(self.scheme, Scheme::LanczosExp { .. }) {
                return Err(Error::InvalidArgument("the Krylov scheme requires a Hermitian generator".into()));
            }
        }
        if let Scheme::LanczosExp { krylov_dim } = self.scheme {
            if krylov_dim < 2 {
                return Err(Error::InvalidArgument("krylov_dim must be at least 2".into()));
            }
        }
        Ok(())
    }

    fn steps(&self, t: T) -> Result<usize> {
        let n = (t / self.dt).round();
        if (n * self.dt - t).abs() > T::lit(1e-9) * (T::one() + t.abs()) || t < T::zero() {
            return Err(Error::InvalidArgument(format!("t = {} is not a multiple of dt", t.f64())));
        }
        Ok(n.to_usize().unwrap_or(0))
    }
}

/// Diagonal absorbing potential at each node of a layout with radii `r_nodes`.
pub fn cap_profile<T: Real>(cap: Option<Cap<T>>, r_nodes: &[T], r_max: T) -> Vec<T> {
    match cap {
        None => vec![T::zero(); r_nodes.len()],
        Some(c) => r_nodes
            .iter()
            .map(|&r| {
                if r > c.onset {
                    let x = (r - c.onset) / (r_max - c.onset);
                    c.strength * x * x
                } else {
                    T::zero()
                }
            })
            .collect(),
    }
}

/// One-step propagator for u' = -i (A - i W) u.
pub struct Propagator<'a, T: Real> {
    a: &'a Csr<T>,
    absorber: Vec<T>,
    dt: T,
    scheme: Scheme,
    solver: Option<ShiftedSolver<'a, T, C<T>>>,
}

const SOLVE_TOL: f64 = 1e-14;

impl<'a, T: Real> Propagator<'a, T> {
    pub fn new(a: &'a Csr<T>, absorber: Vec<T>, config: &PropagationConfig<T>) -> Result<Self> {
        let half_dt = T::lit(0.5) * config.dt;
        let solver = match config.scheme {
            Scheme::CrankNicolson => {
                let ordering = Ordering::best(a);
                let shift: Vec<C<T>> = absorber.iter().map(|&w| C::new(T::one() + half_dt * w, T::zero())).collect();
                let s = ShiftedSolver::new(a, &ordering, C::new(T::zero(), half_dt), shift)
                    .map_err(|_| Error::SolverDiverged { t: 0.0 })?;
                Some(s)
            }
            Scheme::LanczosExp { .. } => None,
        };
        Ok(Propagator { a, absorber, dt: config.dt, scheme: config.scheme, solver })
    }

    pub fn step(&self, u: &[C<T>]) -> Result<Vec<C<T>>> {
        match (&self.solver, self.scheme) {
            (Some(s), _) => {
                let half_dt = T::lit(0.5) * self.dt;
                let au = self.a.apply(u);
                let rhs: Vec<C<T>> = u
                    .iter()
                    .zip(&au)
                    .zip(&self.absorber)
                    .map(|((&x, &y), &w)| x * (T::one() - half_dt * w) - C::new(T::zero(), half_dt) * y)
                    .collect();
                let (x, err) = s.solve_refined(&rhs, T::lit(SOLVE_TOL).max(T::epsilon() * T::lit(4.0)), 3);
                if !(err < T::lit(1e-8)) || x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(Error::SolverDiverged { t: f64::NAN });
                }
                Ok(x)
            }
            (None, Scheme::LanczosExp { krylov_dim }) => krylov_exp(self.a, u, self.dt, krylov_dim),
            (None, Scheme::CrankNicolson) => unreachable!("Crank-Nicolson always carries a solver"),
        }
    }

    /// e^{-itA} u after `steps` steps.
    pub fn evolve(&self, u: &[C<T>], steps: usize) -> Result<Vec<C<T>>> {
        let mut x = u.to_vec();
        for k in 0..steps {
            x = self.step(&x).map_err(|_| Error::SolverDiverged { t: (self.dt * T::of_usize(k)).f64() })?;
        }
        Ok(x)
    }

    /// e^{+itA} u by time reversal.
    pub fn evolve_back(&self, u: &[C<T>], steps: usize) -> Result<Vec<C<T>>> {
        Ok(conj_vec(&self.evolve(&conj_vec(u), steps)?))
    }
}

/// exp(-i dt A) u from an m-step Lanczos basis with full reorthogonalization.
fn krylov_exp<T: Real>(a: &Csr<T>, u: &[C<T>], dt: T, m: usize) -> Result<Vec<C<T>>> {
    let beta0 = norm(u);
    if beta0 == T::zero() {
        return Ok(u.to_vec());
    }
    let m = m.min(u.len());
    let mut basis: Vec<Vec<C<T>>> = vec![u.iter().map(|&x| x * beta0.recip()).collect()];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    for k in 0..m {
        let mut w = a.apply(&basis[k]);
        let ak = dot(&basis[k], &w).re;
        alpha.push(ak);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                for (wi, &vi) in w.iter_mut().zip(v) {
                    *wi -= c * vi;
                }
            }
        }
        let b = norm(&w);
        if k + 1 == m || b <= T::epsilon() * T::lit(1e3) * (T::one() + ak.abs()) {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x * b.recip()).collect());
    }
    let k = alpha.len();
    let t = DMat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            T::zero()
        }
    });
    let (vals, vecs) = t.symmetric_eigen();
    // c = exp(-i dt T) e1
    let coef: Vec<C<T>> = (0..k)
        .map(|i| {
            (0..k).fold(C::new(T::zero(), T::zero()), |s, l| {
                let ph = -dt * vals[l];
                s + C::new(ph.cos(), ph.sin()) * (vecs[(i, l)] * vecs[(0, l)])
            })
        })
        .collect();
    let mut out = vec![C::new(T::zero(), T::zero()); u.len()];
    for (c, v) in coef.iter().zip(&basis) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o += *c * x * beta0;
        }
    }
    Ok(out)
}

/// Sampled trajectory; `absorbed[k]` is 1 - |psi(t_k)|^2 / |psi(0)|^2.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<C<T>>>,
    pub norms: Vec<T>,
    pub energies: Vec<T>,
    pub absorbed: Vec<T>,
    /// Last sample time before the absorbed mass exceeds `CLEAN_ABSORPTION`.
    pub clean_until: T,
}

fn check_samples<T: Real>(times: &[T], config: &PropagationConfig<T>) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument("sample times must increase".into()));
        }
    }
    for &t in times {
        if t > config.horizon + T::lit(1e-9) * (T::one() + config.horizon) {
            return Err(Error::InvalidArgument("sample time beyond the horizon".into()));
        }
        steps.push(config.steps(t)?);
    }
    Ok(steps)
}

/// Propagates `psi` under `op` (plus the configured absorber) and records it at `times`.
pub fn propagate<T: Real>(
    op: &LinearOperatorMatrix<T>,
    r_nodes: &[T],
    r_max: T,
    psi: &[C<T>],
    times: &[T],
    config: &PropagationConfig<T>,
) -> Result<Trajectory<T>> {
    let steps = check_samples(times, config)?;
    let absorber = cap_profile(config.cap, r_nodes, r_max);
    let prop = Propagator::new(&op.matrix, absorber, config)?;
    let n0 = norm(psi);
    let mut x = psi.to_vec();
    let mut done = 0;
    let mut traj = Trajectory {
        times: times.to_vec(),
        states: Vec::new(),
        norms: Vec::new(),
        energies: Vec::new(),
        absorbed: Vec::new(),
        clean_until: T::zero(),
    };
    let mut clean = true;
    for (&t, &s) in times.iter().zip(&steps) {
        for k in done..s {
            x = prop.step(&x).map_err(|_| Error::SolverDiverged { t: (config.dt * T::of_usize(k)).f64() })?;
        }
        done = s;
        let nx = norm(&x);
        let absorbed = T::one() - (nx / n0) * (nx / n0);
        clean &= absorbed <= T::lit(CLEAN_ABSORPTION);
        if clean {
            traj.clean_until = t;
        }
        traj.energies.push(dot(&x, &op.matrix.apply(&x)).re / (nx * nx));
        traj.norms.push(nx);
        traj.absorbed.push(absorbed);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// Physical profile exp(-(r - r0)^2 / (4 sr^2) + i rho0 r) times a periodic
/// Gaussian exp(-(1 - cos(th - th0)) / st^2) in th.
fn gaussian_profile<T: Real>(r: T, th: T, r0: T, theta0: T, rho0: T, widths: PacketWidths<T>) -> C<T> {
    let dr = r - r0;
    let mut amp = (-dr * dr / (T::lit(4.0) * widths.r * widths.r)).exp();
    if let Some(st) = widths.theta {
        amp *= (-(T::one() - (th - theta0).cos()) / (st * st)).exp();
    }
    C::new((rho0 * r).cos(), (rho0 * r).sin()) * amp
}

/// Gaussian packet on the grid of `op`, projected onto `window` by a smooth
/// spectral filter with ramp `ramp` and renormalized.
#[allow(clippy::too_many_arguments)]
pub fn make_packet<T: Real>(
    op: &LinearOperatorMatrix<T>,
    grid: &GridSpec<T>,
    r0: T,
    theta0: T,
    rho0: T,
    widths: PacketWidths<T>,
    window: (T, T),
    ramp: T,
) -> Result<WavePacket<T>> {
    let layout = match op.domain {
        GridTag::Cone => grid.cone(),
        GridTag::Tube => grid.tube(),
    };
    if !(widths.r > T::zero() && ramp > T::zero() && window.0 < window.1) {
        return Err(Error::InvalidArgument("packet widths, ramp and window must be non-degenerate".into()));
    }
    let five = T::lit(5.0) * widths.r;
    if r0 - five < layout.r_lo || r0 + five > layout.r_hi {
        return Err(Error::InvalidArgument("packet must sit 5 widths inside the radial range".into()));
    }
    let raw: Vec<C<T>> = layout
        .nodes()
        .zip(&op.domain_weight)
        .map(|((r, t), w)| gaussian_profile(r, t, r0, theta0, rho0, widths) * w.sqrt())
        .collect();
    let n_raw = norm(&raw);
    let raw: Vec<C<T>> = raw.into_iter().map(|x| x * n_raw.recip()).collect();

    let bump = SmoothBump { lo: window.0.f64(), hi: window.1.f64(), ramp: ramp.f64() };
    let filter = spectral_filter(op, |x| bump.eval(x), FilterMode::Chebyshev)?;
    let filtered = filter.apply_complex(&raw);
    let kept = norm(&filtered);
    if kept < T::lit(0.5) {
        return Err(Error::OutOfWindow { kept: kept.f64() });
    }
    let state: Vec<C<T>> = filtered.into_iter().map(|x| x * kept.recip()).collect();
    let support = (window.0 - ramp, window.1 + ramp);
    // The bump is below the indicator of its support, so <psi, chi(P) psi>
    // bounds the spectral mass inside `support` from below.
    let inside = dot(&state, &filter.apply_complex(&state)).re;
    Ok(WavePacket {
        grid: op.domain,
        norm: norm(&state),
        state,
        r0,
        theta0,
        rho0,
        window: support,
        window_mass: inside.min(T::one()),
    })
}

/// Operators shared by the scattering experiments.
pub struct ScatteringSetup<T> {
    pub grid: GridSpec<T>,
    pub p: LinearOperatorMatrix<T>,
    pub pf: LinearOperatorMatrix<T>,
    pub j: LinearOperatorMatrix<T>,
    /// PJ - JP_f as a matrix product.
    pub difference: Csr<T>,
    pub cone_r: Vec<T>,
    pub tube_r: Vec<T>,
}

impl<T: Real> ScatteringSetup<T> {
    pub fn new(model: &ManifoldModel<T>, grid: &GridSpec<T>) -> Result<Self> {
        let diff = assemble_difference(model, grid)?;
        Ok(ScatteringSetup {
            grid: grid.clone(),
            p: assemble_p(model, grid)?,
            pf: assemble_pf(model, grid)?,
            j: assemble_j(model, grid)?,
            difference: diff.product.matrix,
            cone_r: grid.cone().node_r(),
            tube_r: grid.tube().node_r(),
        })
    }

    fn cone_prop(&self, config: &PropagationConfig<T>) -> Result<Propagator<'_, T>> {
        Propagator::new(&self.p.matrix, cap_profile(config.cap, &self.cone_r, self.grid.r_max), config)
    }

    fn tube_prop(&self, config: &PropagationConfig<T>) -> Result<Propagator<'_, T>> {
        Propagator::new(&self.pf.matrix, cap_profile(config.cap, &self.tube_r, self.grid.r_max), config)
    }

    /// W(T) phi = e^{iTP} J e^{-iTP_f} phi.
    pub fn wave_operator(&self, phi: &[C<T>], t: T, config: &PropagationConfig<T>) -> Result<Vec<C<T>>> {
        let s = config.steps(t)?;
        let x = self.tube_prop(config)?.evolve(phi, s)?;
        self.cone_prop(config)?.evolve_back(&self.j.matrix.apply(&x), s)
    }

    /// e^{iTP_f} J^* e^{-iTP} psi.
    pub fn dual_wave_operator(&self, psi: &[C<T>], t: T, config: &PropagationConfig<T>) -> Result<Vec<C<T>>> {
        let s = config.steps(t)?;
        let x = self.cone_prop(config)?.evolve(psi, s)?;
        let jt = self.j.matrix.transpose();
        self.tube_prop(config)?.evolve_back(&jt.apply(&x), s)
    }

    /// |<W(T) phi, psi> - <phi, W~(T) psi>|.
    pub fn duality_defect(&self, phi: &[C<T>], psi: &[C<T>], t: T, config: &PropagationConfig<T>) -> Result<T> {
        let lhs = dot(&self.wave_operator(phi, t, config)?, psi);
        let rhs = dot(phi, &self.dual_wave_operator(psi, t, config)?);
        Ok((lhs - rhs).norm())
    }
}

/// Least-squares fit log y = c - p log t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub t0: f64,
    pub t1: f64,
    pub points: usize,
}

pub fn fit_power_decay(t: &[f64], y: &[f64]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(t, y)| **t > 0.0 && **y > 0.0)
        .map(|(t, y)| (t.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(PowerFit {
        exponent: -sxy / sxx,
        t0: pts[0].0.exp(),
        t1: pts[pts.len() - 1].0.exp(),
        points: pts.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CookRow {
    pub t: f64,
    pub integrand: f64,
    pub absorbed: f64,
    pub clean: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CookReport {
    pub rows: Vec<CookRow>,
    pub clean_until: f64,
    pub fit: PowerFit,
    pub integrable: bool,
}

/// t -> |(PJ - JP_f) e^{-itP_f} phi| with a power-law fit over the last clean decade.
pub fn cook_integrand<T: Real>(
    setup: &ScatteringSetup<T>,
    phi: &[C<T>],
    times: &[T],
    config: &PropagationConfig<T>,
) -> Result<CookReport> {
    let traj = propagate(&setup.pf, &setup.tube_r, setup.grid.r_max, phi, times, config)?;
    let clean_until = traj.clean_until.f64();
    let rows: Vec<CookRow> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(&traj.absorbed)
        .map(|((&t, x), &a)| CookRow {
            t: t.f64(),
            integrand: norm(&setup.difference.apply(x)).f64(),
            absorbed: a.f64(),
            clean: t.f64() <= clean_until,
        })
        .collect();
    let first = rows.iter().map(|r| r.t).find(|&t| t > 0.0).unwrap_or(0.0);
    if !(first > 0.0 && clean_until >= 10.0 * first) {
        return Err(Error::WindowTooShort { t0: first, t1: clean_until });
    }
    // Start at the last sample at or before clean_until / 10 so the fit spans a full decade.
    let lo = rows
        .iter()
        .map(|r| r.t).rfind(|&t| t > 0.0 && t <= clean_until / 10.0 * (1.0 + 1e-12))
        .unwrap_or(first);
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.clean && r.t >= lo * (1.0 - 1e-12)).map(|r| (r.t, r.integrand)).unzip();
    let fit = fit_power_decay(&ts, &ys).ok_or(Error::WindowTooShort { t0: lo, t1: clean_until })?;
    Ok(CookReport { integrable: fit.exponent > 1.0, rows, clean_until, fit })
}

/// Trapezoid integral of the Cook integrand over [a, b] from its sampled rows.
pub fn integrate_rows(rows: &[CookRow], a: f64, b: f64) -> f64 {
    rows.windows(2)
        .filter(|w| w[0].t >= a - 1e-12 && w[1].t <= b + 1e-12)
        .map(|w| 0.5 * (w[0].integrand + w[1].integrand) * (w[1].t - w[0].t))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitRow {
    pub t: f64,
    pub norm: f64,
    /// Distance to the previous sample's state; zero on the first row.
    pub increment: f64,
}

#[derive(Clone, Debug)]
pub struct LimitTable<T> {
    pub rows: Vec<LimitRow>,
    pub states: Vec<Vec<C<T>>>,
}

fn limit_table<T: Real>(
    times: &[T],
    mut state_at: impl FnMut(T) -> Result<Vec<C<T>>>,
) -> Result<LimitTable<T>> {
    let mut rows = Vec::with_capacity(times.len());
    let mut states: Vec<Vec<C<T>>> = Vec::with_capacity(times.len());
    for &t in times {
        let x = state_at(t)?;
        let increment = states.last().map_or(T::zero(), |prev| {
            norm(&prev.iter().zip(&x).map(|(a, b)| *b - *a).collect::<Vec<_>>())
        });
        rows.push(LimitRow { t: t.f64(), norm: norm(&x).f64(), increment: increment.f64() });
        states.push(x);
    }
    Ok(LimitTable { rows, states })
}

/// W_±(T) phi at each T. `Minus` uses W_-(T) phi = conj(W_+(T) conj phi).
pub fn wave_operator_approx<T: Real>(
    setup: &ScatteringSetup<T>,
    phi: &[C<T>],
    times: &[T],
    direction: Direction,
    config: &PropagationConfig<T>,
) -> Result<LimitTable<T>> {
    check_samples(times, config)?;
    let tube = setup.tube_prop(config)?;
    let cone = setup.cone_prop(config)?;
    let start = match direction {
        Direction::Plus => phi.to_vec(),
        Direction::Minus => conj_vec(phi),
    };
    let mut x = start;
    let mut done = 0;
    limit_table(times, |t| {
        let s = config.steps(t)?;
        x = tube.evolve(&x, s - done)?;
        done = s;
        let w = cone.evolve_back(&setup.j.matrix.apply(&x), s)?;
        Ok(match direction {
            Direction::Plus => w,
            Direction::Minus => conj_vec(&w),
        })
    })
}

#[derive(Clone, Debug)]
pub struct CompletenessReport<T> {
    pub table: LimitTable<T>,
    /// Mass of e^{-iTP} psi in r <= 1, where J^* is not isometric.
    pub inner_mass: Vec<f64>,
    /// Mass of psi on the supplied bound states.
    pub bound_mass: f64,
}

/// W~(T) psi = e^{iTP_f} J^* e^{-iTP} psi with the mass bookkeeping.
pub fn completeness_probe<T: Real>(
    setup: &ScatteringSetup<T>,
    psi: &[C<T>],
    times: &[T],
    bound_states: &[Vec<T>],
    config: &PropagationConfig<T>,
) -> Result<CompletenessReport<T>> {
    check_samples(times, config)?;
    let tube = setup.tube_prop(config)?;
    let cone = setup.cone_prop(config)?;
    let jt = setup.j.matrix.transpose();
    let mut x = psi.to_vec();
    let mut done = 0;
    let mut inner_mass = Vec::with_capacity(times.len());
    let table = limit_table(times, |t| {
        let s = config.steps(t)?;
        x = cone.evolve(&x, s - done)?;
        done = s;
        let inner: T = x
            .iter()
            .zip(&setup.cone_r)
            .filter(|(_, &r)| r <= T::one())
            .map(|(v, _)| v.norm_sqr())
            .sum();
        inner_mass.push(inner.f64());
        tube.evolve_back(&jt.apply(&x), s)
    })?;
    let bound_mass = bound_states
        .iter()
        .map(|v| {
            let c = psi.iter().zip(v).fold(C::new(T::zero(), T::zero()), |s, (p, &b)| s + *p * b);
            c.norm_sqr().f64()
        })
        .sum();
    Ok(CompletenessReport { table, inner_mass, bound_mass })
}

/// Angular marginal and localization statistics.
#[derive(Clone, Debug, Serialize)]
pub struct DirectionStats {
    pub theta: Vec<f64>,
    pub marginal: Vec<f64>,
    pub mean: f64,
    /// 1 - |E e^{i th}|: 0 for a point mass, 1 for the uniform law.
    pub circular_variance: f64,
    pub nearest_critical: Option<f64>,
    pub distance_to_critical: Option<f64>,
    /// 1 - E cos(th - th_c) about the nearest critical direction th_c.
    pub critical_dispersion: Option<f64>,
}

fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// p(th_k) = sum_r |u(r, th_k)|^2 of a scaled state, normalized to unit mass.
pub fn direction_histogram<T: Real>(state: &[C<T>], theta: &[T], critical_points: &[T]) -> DirectionStats {
    let nt = theta.len();
    let mut p = vec![0.0; nt];
    for (i, v) in state.iter().enumerate() {
        p[i % nt] += v.norm_sqr().f64();
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|x| *x /= total);
    }
    let th: Vec<f64> = theta.iter().map(|t| t.f64()).collect();
    let (c, s) = th.iter().zip(&p).fold((0.0, 0.0), |(c, s), (t, w)| (c + w * t.cos(), s + w * t.sin()));
    let mean = s.atan2(c).rem_euclid(std::f64::consts::TAU);
    let nearest = critical_points
        .iter()
        .map(|x| x.f64())
        .min_by(|a, b| angle_distance(*a, mean).total_cmp(&angle_distance(*b, mean)));
    let dispersion = nearest.map(|tc| 1.0 - th.iter().zip(&p).map(|(t, w)| w * (t - tc).cos()).sum::<f64>());
    DirectionStats {
        circular_variance: 1.0 - c.hypot(s),
        distance_to_critical: nearest.map(|tc| angle_distance(tc, mean)),
        nearest_critical: nearest,
        critical_dispersion: dispersion,
        theta: th,
        marginal: p,
        mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Trig;
    use crate::spectral::eigenpairs;
    use crate::scalar::complexify;

    fn cfg(dt: f64, horizon: f64) -> PropagationConfig<f64> {
        PropagationConfig::crank_nicolson(dt, horizon, None)
    }

    fn radial_grid(n: usize, r_max: f64) -> GridSpec<f64> {
        GridSpec::new(0.25, r_max, n, 1, 2.0, 2.0)
    }

    #[test]
    fn crank_nicolson_conserves_norm_and_energy() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 8.0, 40, 8, 2.0, 2.0);
        let p = assemble_p(&m, &g).unwrap();
        let lay = g.cone();
        let psi: Vec<C<f64>> = lay
            .nodes()
            .zip(&p.domain_weight)
            .map(|((r, t), w)| gaussian_profile(r, t, 4.0, 1.0, 0.8, PacketWidths { r: 0.6, theta: Some(0.5) }) * w.sqrt())
            .collect();
        let n0 = norm(&psi);
        let psi: Vec<C<f64>> = psi.iter().map(|x| x / n0).collect();
        let c = cfg(0.05, 5.0);
        let tr = propagate(&p, &lay.node_r(), g.r_max, &psi, &[1.0, 5.0], &c).unwrap();
        assert!((tr.norms[1] - 1.0).abs() < 5e-8, "{}", tr.norms[1]);
        assert!((tr.energies[1] - tr.energies[0]).abs() < 1e-6 * tr.energies[0].abs().max(1.0));
        assert_eq!(tr.clean_until, 5.0);
    }

    #[test]
    fn eigenvector_is_stationary() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 6.0, 30, 8, 2.0, 2.0);
        let p = assemble_p(&m, &g).unwrap();
        let pairs = eigenpairs(&p, 0.0, 1.5, 40).unwrap();
        let (e, v) = (pairs[0].0, complexify(&pairs[0].1));
        for scheme in [Scheme::CrankNicolson, Scheme::LanczosExp { krylov_dim: 20 }] {
            let c = PropagationConfig { dt: 0.02, horizon: 2.0, scheme, cap: None };
            let tr = propagate(&p, &g.cone().node_r(), g.r_max, &v, &[2.0], &c).unwrap();
            let ph = C::new((e * 2.0).cos(), -(e * 2.0).sin());
            let fid = dot(&v.iter().map(|x| x * ph).collect::<Vec<_>>(), &tr.states[0]).norm();
            assert!(fid >= 1.0 - 2e-6, "{scheme:?} {fid}");
        }
    }

    #[test]
    fn free_gaussian_matches_closed_form() {
        // 1-D tube with P_f = -1/2 d_r^2: the free Gaussian spreads as
        // |psi|^2 ~ exp(-(r - r0 - k t)^2 / (2 s(t)^2)), s(t)^2 = s^2 + t^2 / (4 s^2).
        let g = radial_grid(1600, 80.0);
        let m = ManifoldModel::<f64>::flat(1);
        let pf = assemble_pf(&m, &g).unwrap();
        let lay = g.tube();
        let (r0, k, s) = (20.0, 1.0, 2.0);
        let psi: Vec<C<f64>> = lay
            .nodes()
            .zip(&pf.domain_weight)
            .map(|((r, t), w)| gaussian_profile(r, t, r0, 0.0, k, PacketWidths { r: s, theta: None }) * w.sqrt())
            .collect();
        let n0 = norm(&psi);
        let psi: Vec<C<f64>> = psi.iter().map(|x| x / n0).collect();
        let t = 10.0;
        let tr = propagate(&pf, &lay.node_r(), g.r_max, &psi, &[t], &cfg(0.01, t)).unwrap();
        let st2 = s * s + t * t / (4.0 * s * s);
        let dens: Vec<f64> = lay
            .r
            .iter()
            .map(|&r| (-(r - r0 - k * t).powi(2) / (2.0 * st2)).exp())
            .collect();
        let z: f64 = dens.iter().sum();
        let err = dens
            .iter()
            .zip(&tr.states[0])
            .map(|(d, x)| (d / z - x.norm_sqr()).abs())
            .fold(0.0, f64::max);
        let peak = dens.iter().fold(0.0f64, |m, d| m.max(d / z));
        assert!(err < 1e-3 * peak.max(1.0) && err / peak < 1e-2, "{err} {peak}");
    }

    #[test]
    fn absorber_removes_outgoing_packet() {
        let g = radial_grid(400, 80.0);
        let m = ManifoldModel::<f64>::flat(1);
        let pf = assemble_pf(&m, &g).unwrap();
        let lay = g.tube();
        let psi: Vec<C<f64>> = lay
            .nodes()
            .zip(&pf.domain_weight)
            .map(|((r, t), w)| gaussian_profile(r, t, 30.0, 0.0, 1.5, PacketWidths { r: 2.0, theta: None }) * w.sqrt())
            .collect();
        let n0 = norm(&psi);
        let psi: Vec<C<f64>> = psi.iter().map(|x| x / n0).collect();
        let c = PropagationConfig::crank_nicolson(0.1, 60.0, Some(Cap { strength: 0.5, onset: 50.0 }));
        let times: Vec<f64> = (1..=12).map(|k| 5.0 * k as f64).collect();
        let tr = propagate(&pf, &lay.node_r(), g.r_max, &psi, &times, &c).unwrap();
        assert!(tr.norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(*tr.norms.last().unwrap() <= 0.05, "{:?}", tr.norms);
        assert!(tr.clean_until >= 5.0 && tr.clean_until < 60.0);
    }

    #[test]
    fn config_invariants() {
        let g = GridSpec::new(0.25, 20.0, 80, 8, 2.0, 2.0);
        assert!(cfg(0.25, 1.0).validate(&g).is_ok());
        assert!(cfg(0.3, 1.0).validate(&g).is_err());
        let near_wall = PropagationConfig::crank_nicolson(0.1, 1.0, Some(Cap { strength: 1.0, onset: 19.0 }));
        assert!(near_wall.validate(&g).is_err());
        assert!(cfg(0.1, 1.0).steps(0.35).is_err());
    }

    #[test]
    fn packet_filter_limits() {
        let m = ManifoldModel::<f64>::flat_short_range(0.5);
        let g = GridSpec::new(0.25, 30.0, 120, 8, 2.0, 2.0);
        let pf = assemble_pf(&m, &g).unwrap();
        let w = PacketWidths { r: 1.5, theta: None };
        let (lo, hi) = pf.matrix.gershgorin();
        let full = make_packet(&pf, &g, 12.0, 0.0, 1.2, w, (lo - 1.0, hi + 1.0), 0.5).unwrap();
        let lay = g.tube();
        let raw: Vec<C<f64>> = lay
            .nodes()
            .zip(&pf.domain_weight)
            .map(|((r, t), wt)| gaussian_profile(r, t, 12.0, 0.0, 1.2, w) * wt.sqrt())
            .collect();
        let n0 = norm(&raw);
        let diff = raw.iter().zip(&full.state).map(|(a, b)| (a / n0 - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
        assert!(matches!(
            make_packet(&pf, &g, 12.0, 0.0, 1.2, w, (5.0, 6.0), 0.1),
            Err(Error::OutOfWindow { .. })
        ));
        let tagged = make_packet(&pf, &g, 12.0, 0.0, 1.2, w, (0.42, 1.02), 0.1).unwrap();
        assert!((tagged.norm - 1.0).abs() < 1e-10 && tagged.window_mass >= 0.95);
    }

    #[test]
    fn default_packet_energy_concentrates_in_window() {
        // rho0 = sqrt(2 (E_c - V~(th0))) on a small default-model cone; the
        // spectral mass is checked against a full eigendecomposition.
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 16.0, 60, 12, 2.0, 2.0);
        let p = assemble_p(&m, &g).unwrap();
        let (th0, ec) = (1.1f64, 0.6);
        let rho0 = (2.0 * (ec - (2.0 * th0).cos())).sqrt();
        let pk = make_packet(&p, &g, 8.0, th0, rho0, PacketWidths { r: 1.2, theta: Some(0.6) }, (ec - 0.4, ec + 0.4), 0.1)
            .unwrap();
        let (vals, vecs) = p.matrix.to_dense().symmetric_eigen();
        let mass: f64 = (0..vals.len())
            .filter(|&k| vals[k] >= pk.window.0 && vals[k] <= pk.window.1)
            .map(|k| {
                let v = vecs.col(k);
                pk.state.iter().zip(&v).fold(C::new(0.0, 0.0), |s, (x, y)| s + x * y).norm_sqr()
            })
            .sum();
        assert!(pk.window_mass >= 0.95 && mass >= pk.window_mass - 1e-6, "{mass} {}", pk.window_mass);
    }

    fn random_state(n: usize, seed: u64) -> Vec<C<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<C<f64>> = (0..n).map(|_| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let s = norm(&v);
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn wave_operator_at_zero_is_identification() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 6.0, 24, 8, 2.0, 2.0);
        let setup = ScatteringSetup::new(&m, &g).unwrap();
        let phi = random_state(setup.pf.dim(), 1);
        let psi = random_state(setup.p.dim(), 2);
        let c = cfg(0.1, 1.0);
        let w0 = wave_operator_approx(&setup, &phi, &[0.0], Direction::Plus, &c).unwrap();
        let jphi = setup.j.matrix.apply(&phi);
        assert!(w0.states[0].iter().zip(&jphi).all(|(a, b)| (a - b).norm() < 1e-15));
        let wt = completeness_probe(&setup, &psi, &[0.0], &[], &c).unwrap();
        let jt = setup.j.matrix.transpose().apply(&psi);
        assert!(wt.table.states[0].iter().zip(&jt).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn duality_holds_for_random_pairs() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 6.0, 24, 8, 2.0, 2.0);
        let setup = ScatteringSetup::new(&m, &g).unwrap();
        let c = cfg(0.1, 1.0);
        for k in 0..4 {
            let phi = random_state(setup.pf.dim(), 10 + k);
            let psi = random_state(setup.p.dim(), 20 + k);
            let d = setup.duality_defect(&phi, &psi, 1.0, &c).unwrap();
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn minus_direction_is_conjugate_of_plus() {
        let m = ManifoldModel::<f64>::default_model();
        let g = GridSpec::new(0.25, 6.0, 24, 8, 2.0, 2.0);
        let setup = ScatteringSetup::new(&m, &g).unwrap();
        let phi = random_state(setup.pf.dim(), 3);
        let c = cfg(0.1, 1.0);
        let minus = wave_operator_approx(&setup, &phi, &[1.0], Direction::Minus, &c).unwrap();
        // W_-(T) = e^{-iTP} J e^{iTP_f}, built directly.
        let s = c.steps(1.0).unwrap();
        let tube = setup.tube_prop(&c).unwrap();
        let cone = setup.cone_prop(&c).unwrap();
        let direct = cone.evolve(&setup.j.matrix.apply(&tube.evolve_back(&phi, s).unwrap()), s).unwrap();
        let err = minus.states[0].iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn direction_stats_limits() {
        let nt = 64;
        let th: Vec<f64> = (0..nt).map(|k| std::f64::consts::TAU * k as f64 / nt as f64).collect();
        let uniform: Vec<C<f64>> = (0..3 * nt).map(|_| C::new(1.0, 0.0)).collect();
        let st = direction_histogram(&uniform, &th, &[]);
        assert!((st.circular_variance - 1.0).abs() < 1e-12);
        let mut delta = vec![C::new(0.0, 0.0); 3 * nt];
        delta[nt + 10] = C::new(0.0, 2.0);
        let crit = [0.0, std::f64::consts::FRAC_PI_2];
        let st = direction_histogram(&delta, &th, &crit);
        assert!((st.mean - th[10]).abs() < 1e-12 && st.circular_variance < 1e-12);
        assert_eq!(st.nearest_critical, Some(std::f64::consts::FRAC_PI_2));
        let model = ManifoldModel::<f64>::flat(2).with_v_tilde(Trig::cosine(2, 1.0));
        assert_eq!(model.critical_values(256, 16).unwrap().points.len(), 4);
    }

    #[test]
    fn power_fit_recovers_exponent() {
        let t: Vec<f64> = (1..20).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * t.powf(-1.7)).collect();
        let f = fit_power_decay(&t, &y).unwrap();
        assert!((f.exponent - 1.7).abs() < 1e-12);
    }
}
