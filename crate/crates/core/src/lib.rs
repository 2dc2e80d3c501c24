// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mourre;
pub mod operators;
pub mod propagation;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::{Field, Real};

/// Double-precision aliases.
pub mod f64 {
    pub type ManifoldModel = crate::geometry::ManifoldModel<f64>;
    pub type GridSpec = crate::geometry::GridSpec<f64>;
    pub type LinearOperatorMatrix = crate::operators::LinearOperatorMatrix<f64>;
    pub type WavePacket = crate::propagation::WavePacket<f64>;
    pub type PropagationConfig = crate::propagation::PropagationConfig<f64>;
}

/// Single-precision aliases.
pub mod f32 {
    pub type ManifoldModel = crate::geometry::ManifoldModel<f32>;
    pub type GridSpec = crate::geometry::GridSpec<f32>;
    pub type LinearOperatorMatrix = crate::operators::LinearOperatorMatrix<f32>;
    pub type WavePacket = crate::propagation::WavePacket<f32>;
    pub type PropagationConfig = crate::propagation::PropagationConfig<f32>;
}
