//! Run configuration. Every field has a default, and the materialized config
//! (defaults filled in) is what the report embeds and hashes.

use std::path::Path;

use conelab::geometry::{GridSpec, ManifoldModel};
use conelab::mourre::BoundConfig;
use conelab::propagation::{Cap, PacketWidths, PropagationConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// V~ = cos 2th with r^{-2} perturbations.
    Default,
    Flat { dim: usize },
    /// Flat metric, V~ = 0, V_s = c r^{-2}.
    FlatShortRange { c: f64 },
    Custom { model: Box<ManifoldModel<f64>> },
}

impl ModelSpec {
    pub fn build(&self) -> ManifoldModel<f64> {
        match self {
            ModelSpec::Default => ManifoldModel::default_model(),
            ModelSpec::Flat { dim } => ManifoldModel::flat(*dim),
            ModelSpec::FlatShortRange { c } => ManifoldModel::flat_short_range(*c),
            ModelSpec::Custom { model } => (**model).clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Default => "default",
            ModelSpec::Flat { .. } => "flat",
            ModelSpec::FlatShortRange { .. } => "flat_short_range",
            ModelSpec::Custom { .. } => "custom",
        }
    }
}

/// Cone (r_min, r_max) with n_r interior radial nodes; the tube reaches
/// `tube_extent` below zero and shares the outer wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub tube_extent: f64,
    pub e_max: f64,
}

impl GridConfig {
    /// Grid with radial spacing close to `dr`.
    pub fn with_spacing(r_min: f64, r_max: f64, dr: f64, n_theta: usize, tube_extent: f64, e_max: f64) -> Self {
        let n_r = ((r_max - r_min) / dr).round() as usize - 1;
        GridConfig { r_min, r_max, n_r, n_theta, tube_extent, e_max }
    }

    pub fn build(&self) -> GridSpec<f64> {
        let mut g = GridSpec::new(self.r_min, self.r_max, self.n_r, self.n_theta, self.tube_extent, self.e_max);
        g.n_theta = self.n_theta;
        g
    }

    /// The grid refined by `factor` in both directions.
    pub fn refined(&self, factor: f64) -> Self {
        GridConfig {
            n_r: ((self.n_r + 1) as f64 * factor).round() as usize - 1,
            n_theta: (self.n_theta as f64 * factor).round() as usize,
            ..self.clone()
        }
    }
}

/// Gaussian packet filtered to [center - half_width, center + half_width].
/// `center: None` takes rho0^2 / 2 + V~(theta0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub r0: f64,
    pub theta0: f64,
    pub rho0: f64,
    pub sigma_r: f64,
    /// None gives a theta-independent profile.
    pub sigma_theta: Option<f64>,
    pub center: Option<f64>,
    pub half_width: f64,
    pub ramp: f64,
}

impl PacketConfig {
    pub fn widths(&self) -> PacketWidths<f64> {
        PacketWidths { r: self.sigma_r, theta: self.sigma_theta }
    }

    pub fn window(&self, model: &ManifoldModel<f64>) -> (f64, f64) {
        let c = self.center.unwrap_or(0.5 * self.rho0 * self.rho0 + model.v_tilde.eval(self.theta0));
        (c - self.half_width, c + self.half_width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub window: [f64; 2],
    pub max_count: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            model: ModelSpec::Default,
            grid: GridConfig { r_min: 0.25, r_max: 12.0, n_r: 40, n_theta: 32, tube_extent: 1.0, e_max: 2.0 },
            window: [-1.0, 0.4],
            max_count: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MourreConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    /// Refinement factor for the stability check; None skips it.
    pub refine: Option<f64>,
    pub window: [f64; 2],
    pub eta: f64,
    pub lambdas: Vec<f64>,
    pub bound: BoundConfig<f64>,
    pub max_count: usize,
    /// Per-region diagnostics at the largest lambda.
    pub partition: bool,
}

impl Default for MourreConfig {
    fn default() -> Self {
        MourreConfig {
            model: ModelSpec::Default,
            grid: GridConfig { r_min: 0.25, r_max: 40.0, n_r: 100, n_theta: 400, tube_extent: 1.0, e_max: 1.5 },
            refine: Some(1.5),
            window: [0.2, 0.4],
            eta: 0.05,
            lambdas: vec![1.0, 3.0, 10.0, 30.0],
            bound: BoundConfig::default(),
            max_count: 400,
            partition: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LapConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub window: [f64; 2],
    pub eta: f64,
    /// Number of equispaced interior energies.
    pub energies: usize,
    pub s: f64,
    /// Explicit eps grid (decreasing); None builds one from the level spacing.
    pub eps: Option<Vec<f64>>,
    /// Largest eps, in units of the mean level spacing.
    pub eps_top_spacings: f64,
    pub points_per_decade: usize,
    /// Smallest eps of the clean scan, in units of the mean level spacing.
    pub eps_floor_spacings: f64,
    /// Grid eigenvalues in the window scanned for blowup.
    pub seeded: usize,
    /// Smallest eps of the seeded scan, in units of the mean level spacing.
    pub seeded_floor_spacings: f64,
    pub max_count: usize,
}

impl Default for LapConfig {
    fn default() -> Self {
        LapConfig {
            model: ModelSpec::Default,
            grid: GridConfig { r_min: 0.25, r_max: 20.0, n_r: 50, n_theta: 200, tube_extent: 1.0, e_max: 1.5 },
            window: [0.2, 0.4],
            eta: 0.05,
            energies: 10,
            s: 0.7,
            eps: None,
            eps_top_spacings: 1000.0,
            points_per_decade: 3,
            eps_floor_spacings: 10.0,
            seeded: 3,
            seeded_floor_spacings: 1e-3,
            max_count: 400,
        }
    }
}

fn cook_grid() -> GridConfig {
    GridConfig::with_spacing(0.25, 260.0, 0.2, 8, 2.0, 1.5)
}

fn outgoing_packet() -> PacketConfig {
    PacketConfig {
        r0: 20.0,
        theta0: 0.0,
        rho0: 1.2,
        sigma_r: 4.0,
        sigma_theta: None,
        center: Some(0.72),
        half_width: 0.52,
        ramp: 0.2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CookConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub propagation: PropagationConfig<f64>,
    pub sample_every: f64,
}

impl Default for CookConfig {
    fn default() -> Self {
        CookConfig {
            model: ModelSpec::FlatShortRange { c: 0.5 },
            grid: cook_grid(),
            packet: outgoing_packet(),
            propagation: PropagationConfig::crank_nicolson(0.1, 160.0, Some(Cap { strength: 0.5, onset: 210.0 })),
            sample_every: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    pub pairs: usize,
    pub t: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        DualityConfig { pairs: 20, t: 20.0 }
    }
}

/// The absorbing run (`cook`) fixes the clean window and the Cook bound; W(T)
/// itself is propagated without absorber (`propagation`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveopConfig {
    pub cook: CookConfig,
    pub propagation: PropagationConfig<f64>,
    pub sample_every: f64,
    pub minus: bool,
    pub duality: DualityConfig,
}

impl Default for WaveopConfig {
    fn default() -> Self {
        WaveopConfig {
            cook: CookConfig::default(),
            propagation: PropagationConfig::crank_nicolson(0.1, 160.0, None),
            sample_every: 10.0,
            minus: false,
            duality: DualityConfig::default(),
        }
    }
}

fn localize_grid() -> GridConfig {
    GridConfig::with_spacing(0.25, 90.0, 0.2, 48, 2.0, 1.5)
}

fn angular_packet() -> PacketConfig {
    PacketConfig {
        r0: 8.5,
        theta0: 1.1,
        rho0: 1.2,
        sigma_r: 1.6,
        sigma_theta: Some(0.25),
        center: None,
        half_width: 0.8,
        ramp: 0.2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub propagation: PropagationConfig<f64>,
    pub sample_every: f64,
    /// Eigenvalues of P below this count as bound states.
    pub bound_below: f64,
    pub max_bound: usize,
}

impl Default for CompleteConfig {
    fn default() -> Self {
        CompleteConfig {
            model: ModelSpec::Default,
            grid: GridConfig::with_spacing(0.25, 90.0, 0.2, 32, 2.0, 1.5),
            packet: angular_packet(),
            propagation: PropagationConfig::crank_nicolson(0.1, 40.0, None),
            sample_every: 5.0,
            bound_below: 0.0,
            max_bound: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub propagation: PropagationConfig<f64>,
    pub sample_every: f64,
    /// Allowed relative rise over the running minimum.
    pub ripple: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            model: ModelSpec::Default,
            grid: localize_grid(),
            packet: angular_packet(),
            propagation: PropagationConfig::crank_nicolson(0.05, 50.0, Some(Cap { strength: 0.5, onset: 75.0 })),
            sample_every: 1.0,
            ripple: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub spectrum: SpectrumConfig,
    pub mourre: MourreConfig,
    pub lap: LapConfig,
    pub cook: CookConfig,
    pub waveop: WaveopConfig,
    pub complete: CompleteConfig,
    pub localize: LocalizeConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&sort_keys(v)).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// 0, step, 2 step, ... up to `end` (inclusive within rounding).
pub fn sample_times(step: f64, end: f64) -> Vec<f64> {
    let n = (end / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}
