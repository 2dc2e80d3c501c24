//! One runner per subcommand. `run_*` return typed results shared with the
//! self-test; `cmd_*` turn them into reports.

use conelab::geometry::{GridSpec, ManifoldModel};
use conelab::mourre::{lambda_scan_with, partition_diagnostics, LambdaScan, MourreSetup, PartitionReport};
use conelab::operators::{assemble_p, assemble_pf, LinearOperatorMatrix};
use conelab::propagation::{
    completeness_probe, cook_integrand, direction_histogram, integrate_rows, make_packet, propagate,
    wave_operator_approx, CookReport, Direction, DirectionStats, LimitRow, ScatteringSetup, WavePacket,
};
use conelab::scalar::conj_vec;
use conelab::spectral::{eigenpairs, lap_scan, level_spacing, LapFlag, LapScan, SpectralWindow};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{
    sample_times, CompleteConfig, Config, CookConfig, GridConfig, LapConfig, LocalizeConfig, ModelSpec, MourreConfig,
    PacketConfig, SpectrumConfig, WaveopConfig,
};
use crate::report::{num, opt, Outcome, Recorder, Table};
use crate::CliError;

type C64 = Complex<f64>;

/// Samples of the critical-value search on the boundary circle.
const CRITICAL_SAMPLES: usize = 720;
const CRITICAL_CAP: usize = 64;

fn setup(spec: &ModelSpec, grid: &GridConfig) -> Result<(ManifoldModel<f64>, GridSpec<f64>), CliError> {
    let model = spec.build();
    model.validate()?;
    let g = grid.build();
    g.validate(model.dim)?;
    Ok((model, g))
}

fn check_window(w: [f64; 2]) -> Result<(), CliError> {
    if !(w[0] < w[1]) {
        return Err(CliError::Config(format!("window [{}, {}] is empty", w[0], w[1])));
    }
    Ok(())
}

fn critical_values(model: &ManifoldModel<f64>) -> Result<Vec<f64>, CliError> {
    let c = model.critical_values(CRITICAL_SAMPLES, CRITICAL_CAP)?;
    Ok(if model.v_tilde.is_constant() { vec![] } else { c.values })
}

fn critical_points(model: &ManifoldModel<f64>) -> Result<Vec<f64>, CliError> {
    Ok(model.critical_values(CRITICAL_SAMPLES, CRITICAL_CAP)?.points)
}

// ---------------------------------------------------------------- spectrum

pub struct SpectrumRun {
    pub p: Vec<f64>,
    pub pf: Vec<f64>,
    /// Discrete Dirichlet ladder of the flat 1-D reduction, when it applies.
    pub ladder: Option<Vec<f64>>,
}

/// The flat free model on a single angular node is -1/2 d^2/dr^2 with
/// Dirichlet ends, whose discrete eigenvalues are (1 - cos(k pi / (n + 1))) / dr^2.
fn dirichlet_ladder(model: &ManifoldModel<f64>, grid: &GridSpec<f64>, lo: f64, hi: f64) -> Option<Vec<f64>> {
    let free = model.dim == 1
        && grid.n_theta == 1
        && *model == ManifoldModel::flat(1);
    if !free {
        return None;
    }
    let (n, dr) = (grid.n_r, grid.dr());
    Some(
        (1..=n)
            .map(|k| (1.0 - (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos()) / (dr * dr))
            .filter(|e| *e >= lo && *e <= hi)
            .collect(),
    )
}

pub fn run_spectrum(cfg: &SpectrumConfig) -> Result<SpectrumRun, CliError> {
    check_window(cfg.window)?;
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    let [lo, hi] = cfg.window;
    let values = |op: &LinearOperatorMatrix<f64>| -> Result<Vec<f64>, CliError> {
        Ok(eigenpairs(op, lo, hi, cfg.max_count)?.into_iter().map(|(e, _)| e).collect())
    };
    let p = values(&assemble_p(&model, &grid)?)?;
    let pf = values(&assemble_pf(&model, &grid)?)?;
    Ok(SpectrumRun { ladder: dirichlet_ladder(&model, &grid, lo, hi), p, pf })
}

#[derive(Serialize)]
struct GapStats {
    count: usize,
    min_gap: Option<f64>,
    mean_gap: Option<f64>,
    max_gap: Option<f64>,
}

fn gap_stats(v: &[f64]) -> GapStats {
    let gaps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let fold = |f: fn(f64, f64) -> f64| gaps.iter().copied().reduce(f);
    GapStats {
        count: v.len(),
        min_gap: fold(f64::min),
        mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
        max_gap: fold(f64::max),
    }
}

pub fn cmd_spectrum(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.spectrum;
    let mut rec = Recorder::new("spectrum", config);
    let run = run_spectrum(cfg)?;
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    rec.describe(&cfg.model, &model, &grid);
    let mut t = Table::new("eigenvalues", &["operator", "index", "eigenvalue", "gap", "ladder"]);
    for (name, vals) in [("P", &run.p), ("P_f", &run.pf)] {
        for (k, &e) in vals.iter().enumerate() {
            let gap = (k > 0).then(|| e - vals[k - 1]);
            let ladder = if name == "P" { run.ladder.as_ref().and_then(|l| l.get(k).copied()) } else { None };
            t.push(vec![name.into(), k.to_string(), num(e), opt(gap), opt(ladder)]);
        }
    }
    rec.table(t);
    rec.set("p", gap_stats(&run.p));
    rec.set("p_f", gap_stats(&run.pf));
    if let Some(l) = &run.ladder {
        let dev = run.p.iter().zip(l).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        rec.set("ladder_max_rel_dev", dev);
        rec.require(l.len() == run.p.len(), "ladder_count", format!("{} eigenvalues, ladder has {}", run.p.len(), l.len()));
        rec.require(dev <= 1e-8, "ladder", format!("max relative deviation {dev:e}"));
    }
    Ok(rec.finish())
}

// ---------------------------------------------------------------- mourre

pub struct MourreRun {
    pub scan: LambdaScan<f64>,
    pub conflicts: Vec<f64>,
    pub critical_values: Vec<f64>,
    pub partition: Option<PartitionReport<f64>>,
    pub setup_seconds: f64,
}

impl MourreRun {
    pub fn alpha_at(&self, lambda: f64) -> Option<f64> {
        self.scan.rows.iter().find(|r| r.lambda == lambda).map(|r| r.alpha)
    }

    /// Window meets a critical value, or alpha at the largest lambda is not positive.
    pub fn degraded(&self) -> bool {
        !self.conflicts.is_empty() || self.scan.rows.last().is_none_or(|r| r.alpha <= 0.0)
    }
}

pub fn run_mourre(cfg: &MourreConfig) -> Result<MourreRun, CliError> {
    check_window(cfg.window)?;
    if cfg.lambdas.is_empty() {
        return Err(CliError::Config("mourre.lambdas is empty".into()));
    }
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    let crit = critical_values(&model)?;
    let mut window = SpectralWindow::from_interval(cfg.window[0], cfg.window[1], cfg.eta);
    window.exclusions = crit.clone();
    let start = std::time::Instant::now();
    let base = MourreSetup::new(&model, &grid, (cfg.window[0], cfg.window[1]), cfg.eta, &cfg.bound, cfg.max_count)?;
    let fine = match cfg.refine {
        Some(f) if f > 1.0 => {
            let g = cfg.grid.refined(f).build();
            g.validate(model.dim)?;
            Some(MourreSetup::new(&model, &g, (cfg.window[0], cfg.window[1]), cfg.eta, &cfg.bound, cfg.max_count)?)
        }
        Some(f) => return Err(CliError::Config(format!("mourre.refine = {f} must exceed 1"))),
        None => None,
    };
    let setup_seconds = start.elapsed().as_secs_f64();
    let scan = lambda_scan_with(&base, fine.as_ref(), &cfg.bound, &cfg.lambdas)?;
    let partition = if cfg.partition && !model.v_tilde.is_constant() {
        let top = *cfg.lambdas.iter().last().expect("nonempty");
        Some(partition_diagnostics(&model, &base, top, cfg.bound.r0)?)
    } else {
        None
    };
    Ok(MourreRun { scan, conflicts: window.conflicts(), critical_values: crit, partition, setup_seconds })
}

pub fn cmd_mourre(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.mourre;
    let mut rec = Recorder::new("mourre", config);
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    rec.describe(&cfg.model, &model, &grid);
    let run = run_mourre(cfg)?;
    let mut t = Table::new("lambda_scan", &["lambda", "alpha", "rank_k", "norm_k", "alpha_refined", "stable"]);
    for r in &run.scan.rows {
        let stable = r.stable.map(|s| s.to_string()).unwrap_or_default();
        t.push(vec![num(r.lambda), num(r.alpha), r.rank_k.to_string(), num(r.norm_k), opt(r.alpha_refined), stable]);
    }
    rec.table(t);
    if let Some(p) = &run.partition {
        let mut t = Table::new(
            "partition",
            &["region", "support_fraction", "predicted_bound", "form_min", "mass_max", "negative_part", "negative_inner_fraction"],
        );
        for r in &p.regions {
            t.push(vec![
                r.region.to_string(),
                num(r.support_fraction),
                opt(r.predicted_bound),
                num(r.form_min),
                num(r.mass_max),
                num(r.negative_part),
                num(r.negative_inner_fraction),
            ]);
        }
        rec.table(t);
        rec.set("partition_delta", p.delta);
        rec.set("partition_identity_defect", p.identity_defect);
        rec.require(p.identity_defect <= 1e-10, "partition_identity", format!("defect {:e}", p.identity_defect));
    }
    rec.set("filtered_states", run.scan.filtered_states);
    rec.set("filtered_states_refined", run.scan.filtered_states_refined);
    rec.set("lambda_threshold", run.scan.lambda_threshold);
    rec.set("critical_values", &run.critical_values);
    rec.set("window_conflicts", &run.conflicts);
    rec.set("degraded", run.degraded());
    rec.set("setup_seconds", run.setup_seconds);
    if model.v_tilde.is_constant() {
        let alphas: Vec<f64> = run.scan.rows.iter().map(|r| r.alpha).collect();
        let spread = alphas.iter().copied().fold(f64::MIN, f64::max) - alphas.iter().copied().fold(f64::MAX, f64::min);
        rec.set("alpha_spread", spread);
        let scale = alphas.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        rec.require(spread <= 1e-9 * scale, "lambda_independence", format!("alpha spread {spread:e} with constant V~"));
    }
    Ok(rec.finish())
}

// ---------------------------------------------------------------- lap

pub struct LapRun {
    pub spacing: f64,
    pub window_clean: bool,
    pub clean: LapScan<f64>,
    pub seeded: Option<LapScan<f64>>,
}

impl LapRun {
    pub fn plateau_everywhere(&self) -> bool {
        self.clean.verdicts.iter().all(|v| v.flag == LapFlag::Plateau)
    }

    pub fn blowup_at_seeds(&self) -> bool {
        self.seeded.as_ref().is_some_and(|s| !s.verdicts.is_empty() && s.verdicts.iter().all(|v| v.flag == LapFlag::Blowup))
    }
}

/// Geometric grid from `top` down to `floor`, `per_decade` points per decade.
pub fn eps_grid(top: f64, floor: f64, per_decade: usize) -> Result<Vec<f64>, CliError> {
    if !(floor > 0.0 && floor < top && per_decade > 0) {
        return Err(CliError::Config(format!("eps range [{floor:e}, {top:e}] is empty")));
    }
    let n = ((top / floor).log10() * per_decade as f64).ceil() as usize;
    Ok((0..=n).map(|k| top * (floor / top).powf(k as f64 / n as f64)).collect())
}

pub fn run_lap(cfg: &LapConfig) -> Result<LapRun, CliError> {
    check_window(cfg.window)?;
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    let p = assemble_p(&model, &grid)?;
    let r = grid.cone().node_r();
    let [lo, hi] = cfg.window;
    let mut window = SpectralWindow::from_interval(lo, hi, cfg.eta);
    window.exclusions = critical_values(&model)?;
    let spacing = level_spacing(&p.matrix, lo, hi)?;
    let eps = match &cfg.eps {
        Some(e) => e.clone(),
        None => eps_grid(cfg.eps_top_spacings * spacing, cfg.eps_floor_spacings * spacing, cfg.points_per_decade)?,
    };
    let clean = lap_scan(&p, &r, &window.energy_grid(cfg.energies), cfg.s, &eps)?;
    let seeded = if cfg.seeded > 0 {
        let eig: Vec<f64> = eigenpairs(&p, lo, hi, cfg.max_count)?.into_iter().map(|(e, _)| e).collect();
        let picks: Vec<f64> = match eig.len() {
            0 => vec![],
            m if cfg.seeded == 1 => vec![eig[m / 2]],
            m => (0..cfg.seeded.min(m)).map(|k| eig[k * (m - 1) / (cfg.seeded.min(m) - 1).max(1)]).collect(),
        };
        let eps = eps_grid(cfg.eps_top_spacings * spacing, cfg.seeded_floor_spacings * spacing, cfg.points_per_decade)?;
        Some(lap_scan(&p, &r, &picks, cfg.s, &eps)?)
    } else {
        None
    };
    Ok(LapRun { spacing, window_clean: window.is_clean(), clean, seeded })
}

pub fn cmd_lap(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.lap;
    let mut rec = Recorder::new("lap", config);
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    rec.describe(&cfg.model, &model, &grid);
    let run = run_lap(cfg)?;
    let mut rows = Table::new("lap_rows", &["kind", "energy", "eps", "norm"]);
    let mut verdicts = Table::new("lap_verdicts", &["kind", "energy", "flag", "rel_change", "exponent"]);
    for (kind, scan) in [("clean", Some(&run.clean)), ("seeded", run.seeded.as_ref())] {
        let Some(scan) = scan else { continue };
        for r in &scan.rows {
            rows.push(vec![kind.into(), num(r.energy), num(r.eps), num(r.norm)]);
        }
        for v in &scan.verdicts {
            let flag = serde_json::to_value(v.flag).expect("flag serializes");
            verdicts.push(vec![
                kind.into(),
                num(v.energy),
                flag.as_str().unwrap_or_default().into(),
                num(v.rel_change),
                num(v.exponent),
            ]);
        }
    }
    rec.table(rows);
    rec.table(verdicts);
    rec.set("level_spacing", run.spacing);
    rec.set("window_clean", run.window_clean);
    rec.set("plateau_everywhere", run.plateau_everywhere());
    if run.window_clean {
        for v in run.clean.verdicts.iter().filter(|v| v.flag != LapFlag::Plateau) {
            rec.require(false, "plateau", format!("E = {:.4} flagged {:?}, change {:.3}", v.energy, v.flag, v.rel_change));
        }
    }
    if let Some(s) = &run.seeded {
        rec.set("blowup_at_seeds", run.blowup_at_seeds());
        for v in s.verdicts.iter().filter(|v| v.flag != LapFlag::Blowup) {
            rec.require(false, "blowup", format!("eigenvalue {:.4} flagged {:?}, exponent {:.3}", v.energy, v.flag, v.exponent));
        }
    }
    Ok(rec.finish())
}

// ---------------------------------------------------------------- propagation

fn packet(
    op: &LinearOperatorMatrix<f64>,
    grid: &GridSpec<f64>,
    model: &ManifoldModel<f64>,
    cfg: &PacketConfig,
) -> Result<WavePacket<f64>, CliError> {
    Ok(make_packet(op, grid, cfg.r0, cfg.theta0, cfg.rho0, cfg.widths(), cfg.window(model), cfg.ramp)?)
}

fn record_packet(rec: &mut Recorder, p: &WavePacket<f64>) {
    rec.set("packet_window", [p.window.0, p.window.1]);
    rec.set("packet_window_mass", p.window_mass);
}

pub struct CookRun {
    pub setup: ScatteringSetup<f64>,
    pub model: ManifoldModel<f64>,
    pub packet: WavePacket<f64>,
    pub report: CookReport,
}

pub fn run_cook(cfg: &CookConfig) -> Result<CookRun, CliError> {
    run_cook_with(cfg, false)
}

/// `conjugate` starts from the conjugated packet, the state whose forward
/// Cook integrand bounds the W_- increments.
fn run_cook_with(cfg: &CookConfig, conjugate: bool) -> Result<CookRun, CliError> {
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    cfg.propagation.validate(&grid)?;
    let setup = ScatteringSetup::new(&model, &grid)?;
    let mut packet = packet(&setup.pf, &grid, &model, &cfg.packet)?;
    if conjugate {
        packet.state = conj_vec(&packet.state);
    }
    let times = sample_times(cfg.sample_every, cfg.propagation.horizon);
    let report = cook_integrand(&setup, &packet.state, &times, &cfg.propagation)?;
    Ok(CookRun { setup, model, packet, report })
}

fn cook_table(r: &CookReport) -> Table {
    let mut t = Table::new("cook", &["t", "integrand", "absorbed", "clean"]);
    for row in &r.rows {
        t.push(vec![num(row.t), num(row.integrand), num(row.absorbed), row.clean.to_string()]);
    }
    t
}

pub fn cmd_cook(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.cook;
    let mut rec = Recorder::new("cook", config);
    let run = run_cook(cfg)?;
    rec.describe(&cfg.model, &run.model, &run.setup.grid);
    record_packet(&mut rec, &run.packet);
    rec.table(cook_table(&run.report));
    rec.set("clean_until", run.report.clean_until);
    rec.set("fit", run.report.fit);
    rec.set("integrable", run.report.integrable);
    rec.require(
        run.report.integrable,
        "cook_integrable",
        format!("fitted exponent {:.3} over [{:.1}, {:.1}]", run.report.fit.exponent, run.report.fit.t0, run.report.fit.t1),
    );
    Ok(rec.finish())
}

pub struct WaveopRun {
    pub cook: CookRun,
    pub rows: Vec<LimitRow>,
    /// Integrated Cook integrand over each sampling interval (0 on the first row).
    pub bounds: Vec<f64>,
    pub duality: Vec<f64>,
}

impl WaveopRun {
    pub fn final_norm_ratio(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.norm) / self.rows.first().map_or(f64::NAN, |r| r.norm)
    }

    pub fn increments_decreasing(&self) -> bool {
        self.rows.iter().skip(1).collect::<Vec<_>>().windows(2).all(|w| w[1].increment <= w[0].increment)
    }

    /// Largest increment minus its Cook bound.
    pub fn worst_bound_excess(&self) -> f64 {
        self.rows.iter().zip(&self.bounds).skip(1).map(|(r, b)| r.increment - b).fold(f64::MIN, f64::max)
    }
}

pub fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let v: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let s = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

pub fn run_waveop(cfg: &WaveopConfig, seed: u64) -> Result<WaveopRun, CliError> {
    let cook = run_cook_with(&cfg.cook, cfg.minus)?;
    let grid = &cook.setup.grid;
    cfg.propagation.validate(grid)?;
    let end = cook.report.clean_until.min(cfg.propagation.horizon);
    let times = sample_times(cfg.sample_every, end);
    if times.len() < 2 {
        return Err(CliError::Experiment(format!("clean window ends at t = {end}, before the first sample")));
    }
    let dir = if cfg.minus { Direction::Minus } else { Direction::Plus };
    // W_-(T) phi = conj(W_+(T) conj phi), and cook.packet already holds conj phi.
    let phi = if cfg.minus { conj_vec(&cook.packet.state) } else { cook.packet.state.clone() };
    let table = wave_operator_approx(&cook.setup, &phi, &times, dir, &cfg.propagation)?;
    let bounds = times
        .iter()
        .enumerate()
        .map(|(k, &t)| if k == 0 { 0.0 } else { integrate_rows(&cook.report.rows, times[k - 1], t) })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_tube, n_cone) = (cook.setup.pf.dim(), cook.setup.p.dim());
    let mut duality = Vec::with_capacity(cfg.duality.pairs);
    for _ in 0..cfg.duality.pairs {
        let phi = random_state(n_tube, &mut rng);
        let psi = random_state(n_cone, &mut rng);
        duality.push(cook.setup.duality_defect(&phi, &psi, cfg.duality.t, &cfg.propagation)?);
    }
    Ok(WaveopRun { cook, rows: table.rows, bounds, duality })
}

pub fn cmd_waveop(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.waveop;
    let mut rec = Recorder::new("waveop", config);
    let run = run_waveop(cfg, config.seed)?;
    rec.describe(&cfg.cook.model, &run.cook.model, &run.cook.setup.grid);
    record_packet(&mut rec, &run.cook.packet);
    let mut t = Table::new("waveop", &["t", "norm", "increment", "cook_bound"]);
    for (r, b) in run.rows.iter().zip(&run.bounds) {
        t.push(vec![num(r.t), num(r.norm), num(r.increment), num(*b)]);
    }
    rec.table(t);
    rec.table(cook_table(&run.cook.report));
    let mut d = Table::new("duality", &["pair", "defect"]);
    for (k, x) in run.duality.iter().enumerate() {
        d.push(vec![k.to_string(), num(*x)]);
    }
    rec.table(d);
    let ratio = run.final_norm_ratio();
    let worst_dual = run.duality.iter().copied().fold(0.0, f64::max);
    let excess = run.worst_bound_excess();
    rec.set("clean_until", run.cook.report.clean_until);
    rec.set("cook_fit", run.cook.report.fit);
    rec.set("final_t", run.rows.last().map(|r| r.t));
    rec.set("final_norm_ratio", ratio);
    rec.set("increments_decreasing", run.increments_decreasing());
    rec.set("worst_bound_excess", excess);
    rec.set("duality_max", worst_dual);
    rec.require((0.98..=1.005).contains(&ratio), "isometry", format!("|W(T) phi| / |phi| = {ratio:.6}"));
    rec.require(run.increments_decreasing(), "cauchy_decreasing", "increments are not decreasing");
    rec.require(excess <= 1e-3, "cauchy_bound", format!("an increment exceeds its Cook bound by {excess:e}"));
    rec.require(worst_dual <= 1e-6, "duality", format!("defect {worst_dual:e}"));
    Ok(rec.finish())
}

pub struct CompleteRun {
    pub rows: Vec<LimitRow>,
    pub inner_mass: Vec<f64>,
    pub bound_mass: f64,
    pub bound_states: usize,
}

pub fn run_complete(cfg: &CompleteConfig) -> Result<(CompleteRun, ManifoldModel<f64>, GridSpec<f64>), CliError> {
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    cfg.propagation.validate(&grid)?;
    let setup = ScatteringSetup::new(&model, &grid)?;
    let psi = packet(&setup.p, &grid, &model, &cfg.packet)?;
    let bottom = setup.p.matrix.gershgorin().0 - 1.0;
    let bound: Vec<Vec<f64>> = if bottom < cfg.bound_below {
        eigenpairs(&setup.p, bottom, cfg.bound_below, cfg.max_bound)?.into_iter().map(|(_, v)| v).collect()
    } else {
        vec![]
    };
    let times = sample_times(cfg.sample_every, cfg.propagation.horizon);
    let rep = completeness_probe(&setup, &psi.state, &times, &bound, &cfg.propagation)?;
    let run = CompleteRun {
        rows: rep.table.rows,
        inner_mass: rep.inner_mass,
        bound_mass: rep.bound_mass,
        bound_states: bound.len(),
    };
    Ok((run, model, grid))
}

pub fn cmd_complete(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.complete;
    let mut rec = Recorder::new("complete", config);
    let (run, model, grid) = run_complete(cfg)?;
    rec.describe(&cfg.model, &model, &grid);
    let mut t = Table::new("complete", &["t", "norm", "increment", "inner_mass"]);
    for (r, m) in run.rows.iter().zip(&run.inner_mass) {
        t.push(vec![num(r.t), num(r.norm), num(r.increment), num(*m)]);
    }
    rec.table(t);
    let top = run.rows.iter().map(|r| r.norm).fold(0.0, f64::max);
    rec.set("bound_states", run.bound_states);
    rec.set("bound_mass", run.bound_mass);
    rec.set("final_norm", run.rows.last().map(|r| r.norm));
    rec.set("max_norm", top);
    rec.require(top <= 1.0 + 1e-8, "contraction", format!("|W~(T) psi| reached {top}"));
    Ok(rec.finish())
}

pub struct LocalizeRun {
    pub times: Vec<f64>,
    pub absorbed: Vec<f64>,
    pub clean_until: f64,
    pub stats: Vec<DirectionStats>,
    pub window_mass: f64,
}

impl LocalizeRun {
    pub fn dispersion(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.critical_dispersion.unwrap_or(f64::NAN)).collect()
    }

    /// Dispersion over the clean window.
    pub fn clean_dispersion(&self) -> Vec<f64> {
        self.times.iter().zip(self.dispersion()).filter(|(t, _)| **t <= self.clean_until).map(|(_, d)| d).collect()
    }

    /// Largest ratio of a clean sample to the running minimum before it.
    pub fn worst_rise(&self) -> f64 {
        let d = self.clean_dispersion();
        let mut lowest = f64::INFINITY;
        let mut worst: f64 = 0.0;
        for x in d {
            if lowest.is_finite() {
                worst = worst.max(x / lowest);
            }
            lowest = lowest.min(x);
        }
        worst
    }
}

pub fn run_localize(cfg: &LocalizeConfig) -> Result<(LocalizeRun, ManifoldModel<f64>, GridSpec<f64>), CliError> {
    let (model, grid) = setup(&cfg.model, &cfg.grid)?;
    cfg.propagation.validate(&grid)?;
    let p = assemble_p(&model, &grid)?;
    let psi = packet(&p, &grid, &model, &cfg.packet)?;
    let lay = grid.cone();
    let times = sample_times(cfg.sample_every, cfg.propagation.horizon);
    let traj = propagate(&p, &lay.node_r(), grid.r_max, &psi.state, &times, &cfg.propagation)?;
    let crit = critical_points(&model)?;
    let stats = traj.states.iter().map(|s| direction_histogram(s, &lay.theta, &crit)).collect();
    let run = LocalizeRun {
        times: traj.times,
        absorbed: traj.absorbed,
        clean_until: traj.clean_until,
        stats,
        window_mass: psi.window_mass,
    };
    Ok((run, model, grid))
}

pub fn cmd_localize(config: &Config) -> Result<Outcome, CliError> {
    let cfg = &config.localize;
    let mut rec = Recorder::new("localize", config);
    let (run, model, grid) = run_localize(cfg)?;
    rec.describe(&cfg.model, &model, &grid);
    let mut t = Table::new(
        "localize",
        &["t", "absorbed", "clean", "mean_direction", "circular_variance", "nearest_critical", "critical_dispersion"],
    );
    for ((s, &time), a) in run.stats.iter().zip(&run.times).zip(&run.absorbed) {
        t.push(vec![
            num(time),
            num(*a),
            (time <= run.clean_until).to_string(),
            num(s.mean),
            num(s.circular_variance),
            opt(s.nearest_critical),
            opt(s.critical_dispersion),
        ]);
    }
    rec.table(t);
    let mut m = Table::new("marginal", &["t", "theta", "mass"]);
    for (s, &time) in run.stats.iter().zip(&run.times) {
        for (th, p) in s.theta.iter().zip(&s.marginal) {
            m.push(vec![num(time), num(*th), num(*p)]);
        }
    }
    rec.table(m);
    let clean = run.clean_dispersion();
    let rise = run.worst_rise();
    rec.set("packet_window_mass", run.window_mass);
    rec.set("clean_until", run.clean_until);
    rec.set("clean_samples", clean.len());
    rec.set("worst_rise", rise);
    rec.require(clean.len() >= 3, "clean_window", format!("{} clean samples", clean.len()));
    rec.require(clean.iter().all(|d| d.is_finite()), "critical_direction", "V~ has no critical points");
    rec.require(rise <= 1.0 + cfg.ripple, "monotone_localization", format!("dispersion rose to {rise:.4} x its running minimum"));
    rec.require(
        clean.last() < clean.first(),
        "localization",
        "dispersion did not decrease over the clean window",
    );
    Ok(rec.finish())
}
