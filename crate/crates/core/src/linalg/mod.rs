pub mod banded;
pub mod chebyshev;
pub mod dense;
pub mod lanczos;
pub mod sparse;

pub use banded::{BandedLdl, Ordering, ShiftedSolver};
pub use chebyshev::ChebyshevSeries;
pub use dense::DMat;
pub use lanczos::window_eigenpairs;
pub use sparse::Csr;
