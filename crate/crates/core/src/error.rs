use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-positive density {value:e} at r = {r}, theta = {theta}")]
    NonPositiveDensity { value: f64, r: f64, theta: f64 },
    #[error("coefficient block not positive definite at r = {r}, theta = {theta}")]
    NonPositiveDefinite { r: f64, theta: f64 },
    #[error("too many critical values: found more than {cap}")]
    TooManyCritical { cap: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too coarse: dr = {dr} exceeds {limit} for E_max = {e_max}")]
    GridTooCoarse { dr: f64, limit: f64, e_max: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid lambda {0}: must be positive")]
    InvalidLambda(f64),
    #[error("eigensolver did not converge: residual {residual:e}")]
    NotConverged { residual: f64 },
    #[error("window holds {count} eigenvalues, more than max_count = {max_count}")]
    WindowTooWide { count: usize, max_count: usize },
    #[error("z = {re} + {im}i is within 1e-8 of the spectrum")]
    NearSingular { re: f64, im: f64 },
    #[error("dimension {dim} exceeds the dense cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },
    #[error("no filtered state survives the far-space restriction")]
    EmptyFarSpace,
    #[error("partition region {region} is nonempty but unresolved on the angular grid")]
    DegeneratePartition { region: usize },
    #[error("packet keeps only {kept:.3} of its norm after filtering")]
    OutOfWindow { kept: f64 },
    #[error("propagation diverged at t = {t}")]
    SolverDiverged { t: f64 },
    #[error("clean window spans t in [{t0}, {t1}], less than one decade")]
    WindowTooShort { t0: f64, t1: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
