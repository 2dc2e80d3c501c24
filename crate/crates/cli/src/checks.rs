//! Invariant suite behind `selftest` and the acceptance target.

use std::time::Instant;

use conelab::geometry::{GridSpec, ManifoldModel};
use conelab::operators::{
    assemble_a, assemble_commutator, assemble_difference, assemble_p, assemble_pf, to_physical, to_scaled, GridTag,
    LinearOperatorMatrix,
};
use conelab::propagation::{propagate, PropagationConfig, ScatteringSetup};
use conelab::scalar::{dot, norm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::{random_state, run_lap, run_localize, run_mourre, run_spectrum, run_waveop};
use crate::config::{Config, GridConfig, LapConfig, ModelSpec, MourreConfig, SpectrumConfig};
use crate::report::{num, Outcome, Recorder, Table};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion this check belongs to, if any.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    fn new(name: &str, criterion: Option<u8>, passed: bool, detail: String, start: Instant) -> Self {
        Check { name: name.into(), criterion, passed, detail, seconds: start.elapsed().as_secs_f64() }
    }

    fn failed(name: &str, criterion: Option<u8>, err: CliError, start: Instant) -> Self {
        Check::new(name, criterion, false, err.to_string(), start)
    }
}

pub const SYMMETRY_TOL: f64 = 1e-12;

/// Weighted-symmetry defect of one operator against `SYMMETRY_TOL`.
pub fn symmetry_invariant(name: &str, op: &LinearOperatorMatrix<f64>) -> Check {
    let start = Instant::now();
    let d = op.weighted_symmetry_defect();
    Check::new(&format!("symmetry:{name}"), Some(1), d <= SYMMETRY_TOL, format!("defect {d:e}"), start)
}

/// P, P_f, A_lambda (lambda = 1, 30) and A_f of the default model on an n x n grid
/// with dr = 0.2.
pub fn symmetry_operators(n: usize) -> Result<Vec<(String, LinearOperatorMatrix<f64>)>, CliError> {
    let model = ManifoldModel::default_model();
    let grid = GridSpec::new(0.25, 0.25 + 0.2 * (n + 1) as f64, n, n, 1.0, 2.0);
    let mut ops = vec![
        ("P".to_string(), assemble_p(&model, &grid)?),
        ("P_f".to_string(), assemble_pf(&model, &grid)?),
        ("A_f".to_string(), assemble_a(&model, &grid, 1.0, GridTag::Tube)?),
    ];
    for lambda in [1.0, 30.0] {
        ops.push((format!("A_{lambda}"), assemble_a(&model, &grid, lambda, GridTag::Cone)?));
    }
    Ok(ops)
}

fn symmetry_checks(out: &mut Vec<Check>) {
    for n in [16, 32, 64] {
        let start = Instant::now();
        match symmetry_operators(n) {
            Ok(ops) => {
                let seconds = start.elapsed().as_secs_f64();
                let mut worst = 0.0f64;
                let mut failures = Vec::new();
                for (name, op) in &ops {
                    let c = symmetry_invariant(&format!("{name}@{n}"), op);
                    worst = worst.max(op.weighted_symmetry_defect());
                    if !c.passed {
                        failures.push(c.name);
                    }
                }
                let fast = n < 64 || seconds < 5.0;
                let detail = format!("{n}x{n}: worst defect {worst:e}, assembly {seconds:.2} s, failing {failures:?}");
                out.push(Check::new(&format!("symmetry {n}x{n}"), Some(1), failures.is_empty() && fast, detail, start));
            }
            Err(e) => out.push(Check::failed(&format!("symmetry {n}x{n}"), Some(1), e, start)),
        }
    }
}

/// Least-squares slope of log err against log h.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|x| x.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// <u, i[P,A] u> / <u, P u> on the flat 1-D reduction for a packet centered at `c`.
fn dilation_ratio(n: usize, c: f64) -> Result<f64, CliError> {
    let model = ManifoldModel::flat(1);
    let mut grid = GridSpec::new(0.25, 10.25, n, 1, 1.0, 2.0);
    grid.n_theta = 1;
    let p = assemble_p(&model, &grid)?;
    let a = assemble_a(&model, &grid, 1.0, GridTag::Cone)?;
    let comm = assemble_commutator(&p, &a)?;
    let u: Vec<f64> = grid.cone().r.iter().map(|&r| (-8.0 * (r - c).powi(2)).exp() * (1.3 * r).cos()).collect();
    let u = to_scaled(&u, &p.domain_weight);
    Ok(dot(&u, &comm.apply(&u)) / dot(&u, &p.apply(&u)))
}

fn dilation_check() -> Check {
    let start = Instant::now();
    let run = || -> Result<(bool, String), CliError> {
        let sizes = [400usize, 800, 1600];
        let mut ok = true;
        let mut parts = Vec::new();
        for c in [3.5, 5.0, 6.5] {
            let ratios: Vec<f64> = sizes.iter().map(|&n| dilation_ratio(n, c)).collect::<Result<_, _>>()?;
            let h: Vec<f64> = sizes.iter().map(|&n| 10.0 / (n + 1) as f64).collect();
            let errs: Vec<f64> = ratios.iter().map(|r| (r - 2.0).abs()).collect();
            let order = fitted_order(&h, &errs);
            let within = ratios.iter().all(|r| (r - 2.0).abs() <= 0.02);
            ok &= within && (1.7..=2.3).contains(&order);
            parts.push(format!("r0 {c}: ratios {:.5}/{:.5}/{:.5}, order {order:.3}", ratios[0], ratios[1], ratios[2]));
        }
        Ok((ok, parts.join("; ")))
    };
    match run() {
        Ok((ok, detail)) => Check::new("dilation identity", Some(2), ok, detail, start),
        Err(e) => Check::failed("dilation identity", Some(2), e, start),
    }
}

/// max |(PJ - JP_f) f| between the product and termwise forms for a smooth f.
fn difference_gap(model: &ManifoldModel<f64>, n: usize) -> Result<f64, CliError> {
    let grid = GridSpec::new(0.25, 4.25, n - 1, 8, 2.0, 2.0);
    let d = assemble_difference(model, &grid)?;
    let f: Vec<f64> =
        grid.tube().nodes().map(|(r, t)| (-(r - 1.5).powi(2)).exp() * (1.0 + 0.4 * t.cos())).collect();
    let u = to_scaled(&f, &d.product.domain_weight);
    let a = to_physical(&d.product.apply(&u), &d.product.codomain_weight);
    let b = to_physical(&d.termwise.apply(&u), &d.product.codomain_weight);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn difference_check() -> Check {
    let start = Instant::now();
    let run = || -> Result<(bool, String), CliError> {
        let sizes = [200usize, 400, 800];
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, model) in [
            ("flat", ManifoldModel::flat(2)),
            ("default", ManifoldModel::default_model()),
            ("flat_short_range", ManifoldModel::flat_short_range(0.5)),
        ] {
            let errs: Vec<f64> = sizes.iter().map(|&n| difference_gap(&model, n)).collect::<Result<_, _>>()?;
            let h: Vec<f64> = sizes.iter().map(|&n| 4.0 / n as f64).collect();
            let order = fitted_order(&h, &errs);
            ok &= order >= 1.7 && errs.windows(2).all(|w| w[1] < w[0]);
            parts.push(format!("{name}: {:.2e}/{:.2e}/{:.2e}, order {order:.3}", errs[0], errs[1], errs[2]));
        }
        Ok((ok, parts.join("; ")))
    };
    match run() {
        Ok((ok, detail)) => Check::new("difference forms", Some(3), ok, detail, start),
        Err(e) => Check::failed("difference forms", Some(3), e, start),
    }
}

fn ladder_check() -> Check {
    let start = Instant::now();
    let cfg = SpectrumConfig {
        model: ModelSpec::Flat { dim: 1 },
        grid: GridConfig { r_min: 0.25, r_max: 10.25, n_r: 60, n_theta: 1, tube_extent: 1.0, e_max: 2.0 },
        window: [0.0, 2.0],
        max_count: 80,
    };
    match run_spectrum(&cfg) {
        Ok(run) => {
            let ladder = run.ladder.unwrap_or_default();
            let dev = run.p.iter().zip(&ladder).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ok = !ladder.is_empty() && ladder.len() == run.p.len() && dev <= 1e-8;
            Check::new("dirichlet ladder", None, ok, format!("{} levels, max deviation {dev:e}", run.p.len()), start)
        }
        Err(e) => Check::failed("dirichlet ladder", None, e, start),
    }
}

/// Norm drift of an unabsorbed Crank-Nicolson run.
fn unitarity_check() -> Check {
    let start = Instant::now();
    let run = || -> Result<f64, CliError> {
        let model = ManifoldModel::default_model();
        let grid = GridSpec::new(0.25, 20.25, 80, 16, 1.0, 2.0);
        let p = assemble_p(&model, &grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = random_state(p.dim(), &mut rng);
        let cfg = PropagationConfig::crank_nicolson(0.1, 20.0, None);
        let times: Vec<f64> = (0..=4).map(|k| 5.0 * k as f64).collect();
        let traj = propagate(&p, &grid.cone().node_r(), grid.r_max, &psi, &times, &cfg)?;
        Ok(traj.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max))
    };
    match run() {
        Ok(d) => Check::new("unitarity", None, d <= 1e-10, format!("norm drift {d:e}"), start),
        Err(e) => Check::failed("unitarity", None, e, start),
    }
}

fn small_duality_check() -> Check {
    let start = Instant::now();
    let run = || -> Result<f64, CliError> {
        let model = ManifoldModel::flat_short_range(0.5);
        let grid = GridSpec::new(0.25, 30.25, 120, 8, 2.0, 1.5);
        let setup = ScatteringSetup::new(&model, &grid)?;
        let cfg = PropagationConfig::crank_nicolson(0.1, 5.0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let phi = random_state(setup.pf.dim(), &mut rng);
            let psi = random_state(setup.p.dim(), &mut rng);
            worst = worst.max(setup.duality_defect(&phi, &psi, 5.0, &cfg)?);
        }
        Ok(worst)
    };
    match run() {
        Ok(d) => Check::new("duality (small)", None, d <= 1e-6, format!("worst of 20 pairs {d:e}"), start),
        Err(e) => Check::failed("duality (small)", None, e, start),
    }
}

fn small_blowup_check() -> Check {
    let start = Instant::now();
    let cfg = LapConfig {
        grid: GridConfig { r_min: 0.25, r_max: 8.0, n_r: 24, n_theta: 16, tube_extent: 1.0, e_max: 2.0 },
        energies: 0,
        eps: Some(vec![0.1]),
        seeded: 2,
        ..LapConfig::default()
    };
    match run_lap(&cfg) {
        Ok(run) => {
            let detail = run
                .seeded
                .as_ref()
                .map(|s| s.verdicts.iter().map(|v| format!("E {:.4}: p {:.3}", v.energy, v.exponent)).collect::<Vec<_>>().join(", "))
                .unwrap_or_default();
            Check::new("blowup (small)", None, run.blowup_at_seeds(), detail, start)
        }
        Err(e) => Check::failed("blowup (small)", None, e, start),
    }
}

fn small_mourre_check() -> Check {
    let start = Instant::now();
    let cfg = MourreConfig {
        model: ModelSpec::FlatShortRange { c: 0.5 },
        grid: GridConfig { r_min: 0.25, r_max: 12.0, n_r: 40, n_theta: 16, tube_extent: 1.0, e_max: 1.5 },
        refine: None,
        max_count: 200,
        partition: false,
        ..MourreConfig::default()
    };
    match run_mourre(&cfg) {
        Ok(run) => {
            let a: Vec<f64> = run.scan.rows.iter().map(|r| r.alpha).collect();
            let spread = a.iter().copied().fold(f64::MIN, f64::max) - a.iter().copied().fold(f64::MAX, f64::min);
            let ok = spread <= 1e-9 * a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            Check::new("mourre lambda-independence (V~ = 0)", None, ok, format!("alphas {a:?}"), start)
        }
        Err(e) => Check::failed("mourre lambda-independence (V~ = 0)", None, e, start),
    }
}

/// Criterion 4 at acceptance scale, with both negative controls.
fn mourre_check() -> Vec<Check> {
    let start = Instant::now();
    let lambda = 30.0;
    let base = MourreConfig { lambdas: vec![1e-3, 1.0, 3.0, 10.0, lambda], ..MourreConfig::default() };
    let control = MourreConfig { window: [0.9, 1.1], refine: None, lambdas: vec![lambda], partition: false, ..base.clone() };
    let main = match run_mourre(&base) {
        Ok(r) => r,
        Err(e) => return vec![Check::failed("mourre", Some(4), e, start)],
    };
    let row = main.scan.rows.iter().find(|r| r.lambda == lambda).expect("lambda in scan");
    let alpha = row.alpha;
    let threshold = 0.5 * alpha;
    let mut out = vec![Check::new(
        "mourre alpha > 0, stable",
        Some(4),
        alpha > 0.0 && row.stable == Some(true),
        format!(
            "alpha {alpha:.4} ({} states), refined {:.4} ({} states), setup {:.0} s",
            main.scan.filtered_states,
            row.alpha_refined.unwrap_or(f64::NAN),
            main.scan.filtered_states_refined.unwrap_or(0),
            main.setup_seconds
        ),
        start,
    )];
    let small = main.alpha_at(1e-3).unwrap_or(f64::NAN);
    out.push(Check::new(
        "mourre control lambda = 1e-3",
        Some(4),
        small < threshold,
        format!("alpha {small:.4e} vs threshold {threshold:.4}"),
        start,
    ));
    let c_start = Instant::now();
    match run_mourre(&control) {
        Ok(c) => {
            let a = c.alpha_at(lambda).unwrap_or(f64::NAN);
            out.push(Check::new(
                "mourre control window at Cv",
                Some(4),
                a < threshold && c.degraded(),
                format!("alpha {a:.4} vs threshold {threshold:.4}, conflicts {:?}", c.conflicts),
                c_start,
            ));
        }
        Err(e) => out.push(Check::failed("mourre control window at Cv", Some(4), e, c_start)),
    }
    let total = start.elapsed().as_secs_f64();
    out.push(Check::new("mourre runtime", Some(4), total < 600.0, format!("{total:.0} s"), start));
    out
}

fn lap_check() -> Vec<Check> {
    let start = Instant::now();
    match run_lap(&LapConfig::default()) {
        Ok(run) => {
            let worst = run.clean.verdicts.iter().map(|v| v.rel_change).fold(0.0, f64::max);
            let flags: Vec<String> = run.clean.verdicts.iter().map(|v| format!("{:?}", v.flag)).collect();
            let seeds: Vec<String> = run
                .seeded
                .iter()
                .flat_map(|s| s.verdicts.iter().map(|v| format!("{:.4}:{:.3}", v.energy, v.exponent)))
                .collect();
            let eps_min = run.clean.rows.last().map_or(f64::NAN, |r| r.eps);
            let total = start.elapsed().as_secs_f64();
            vec![
                Check::new(
                    "lap plateau on clean window",
                    Some(5),
                    run.window_clean && run.plateau_everywhere(),
                    format!(
                        "eps down to {eps_min:.3e} (spacing {:.3e}), worst decade change {worst:.3}, flags {flags:?}",
                        run.spacing
                    ),
                    start,
                ),
                Check::new("lap blowup at eigenvalues", Some(5), run.blowup_at_seeds(), format!("exponents {seeds:?}"), start),
                Check::new("lap runtime", Some(5), total < 600.0, format!("{total:.0} s"), start),
            ]
        }
        Err(e) => vec![Check::failed("lap", Some(5), e, start)],
    }
}

/// Criteria 6, 7, 8 and the t = 0 part of 3 from one wave-operator run.
fn scattering_checks(seed: u64) -> Vec<Check> {
    let start = Instant::now();
    let cfg = Config::default().waveop;
    let run = match run_waveop(&cfg, seed) {
        Ok(r) => r,
        Err(e) => return vec![Check::failed("wave operator", Some(7), e, start)],
    };
    let mut out = Vec::new();
    let cook = &run.cook.report;
    let direct = assemble_difference(&run.cook.model, &run.cook.setup.grid)
        .map(|d| norm(&d.product.apply(&run.cook.packet.state)));
    match direct {
        Ok(d) => {
            let gap = (cook.rows[0].integrand - d).abs();
            out.push(Check::new("cook integrand at t = 0", Some(3), gap <= 1e-10, format!("|difference| {gap:e}"), start));
        }
        Err(e) => out.push(Check::failed("cook integrand at t = 0", Some(3), e.into(), start)),
    }
    let fit = cook.fit;
    out.push(Check::new(
        "cook integrability",
        Some(6),
        fit.exponent > 1.0 && fit.t1 >= 10.0 * fit.t0,
        format!(
            "exponent {:.3} over [{:.1}, {:.1}] ({} points), window mass {:.5}",
            fit.exponent, fit.t0, fit.t1, fit.points, run.cook.packet.window_mass
        ),
        start,
    ));
    let ratio = run.final_norm_ratio();
    out.push(Check::new(
        "wave operator isometry",
        Some(7),
        (0.98..=1.005).contains(&ratio),
        format!("|W(T) phi| / |phi| = {ratio:.6} at T = {}", run.rows.last().map_or(f64::NAN, |r| r.t)),
        start,
    ));
    let incs: Vec<String> = run.rows.iter().skip(1).map(|r| format!("{:.2e}", r.increment)).collect();
    let excess = run.worst_bound_excess();
    out.push(Check::new(
        "cauchy increments",
        Some(7),
        run.increments_decreasing() && excess <= 1e-3,
        format!("increments {incs:?}, worst excess over Cook bound {excess:.2e}"),
        start,
    ));
    let worst = run.duality.iter().copied().fold(0.0, f64::max);
    out.push(Check::new(
        "duality",
        Some(8),
        run.duality.len() == 20 && worst <= 1e-6,
        format!("{} pairs, worst defect {worst:e}", run.duality.len()),
        start,
    ));
    out
}

fn localize_check() -> Check {
    let start = Instant::now();
    match run_localize(&Config::default().localize) {
        Ok((run, _, _)) => {
            let d = run.clean_dispersion();
            let rise = run.worst_rise();
            let ok = d.len() >= 3 && rise <= 1.05 && d.last() < d.first();
            let detail = format!(
                "dispersion {:.4} -> {:.4} over t <= {}, worst rise {rise:.4}, window mass {:.4}",
                d.first().copied().unwrap_or(f64::NAN),
                d.last().copied().unwrap_or(f64::NAN),
                run.clean_until,
                run.window_mass
            );
            Check::new("directional localization", Some(9), ok, detail, start)
        }
        Err(e) => Check::failed("directional localization", Some(9), e, start),
    }
}

/// Runs the suite. Quick covers the small-grid invariants; full adds the
/// acceptance-scale experiments.
pub fn selftest(level: Level, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    symmetry_checks(&mut out);
    out.push(dilation_check());
    out.push(difference_check());
    out.push(ladder_check());
    out.push(unitarity_check());
    out.push(small_duality_check());
    out.push(small_blowup_check());
    out.push(small_mourre_check());
    if level == Level::Full {
        out.extend(mourre_check());
        out.extend(lap_check());
        out.extend(scattering_checks(seed));
        out.push(localize_check());
    }
    out
}

pub fn cmd_selftest(level: Level, config: &Config) -> Outcome {
    let mut rec = Recorder::new("selftest", config);
    let start = Instant::now();
    let checks = selftest(level, config.seed);
    let mut t = Table::new("checks", &["name", "criterion", "passed", "seconds", "detail"]);
    for c in &checks {
        t.push(vec![
            c.name.clone(),
            c.criterion.map(|k| k.to_string()).unwrap_or_default(),
            c.passed.to_string(),
            num(c.seconds),
            c.detail.clone(),
        ]);
        rec.require(c.passed, &c.name, c.detail.clone());
    }
    rec.table(t);
    rec.set("level", level);
    rec.set("checks", checks.len());
    rec.set("passed", checks.iter().filter(|c| c.passed).count());
    rec.set("seconds", start.elapsed().as_secs_f64());
    rec.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_order_recovers_power() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((fitted_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetry_passes_on_assembled_operators() {
        for (name, op) in symmetry_operators(16).unwrap() {
            assert!(symmetry_invariant(&name, &op).passed, "{name}");
        }
    }
}
