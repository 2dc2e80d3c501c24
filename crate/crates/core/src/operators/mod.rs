//! Finite-dimensional P, P_f, J, J~, the conjugate operators, the commutator
//! and PJ - JP_f.
//!
//! Every matrix is stored in the unitary ("scaled") representation u = W^{1/2} f,
//! where W is the diagonal quadrature weight of the grid (G dr dth on the cone,
//! H dr dth on the tube). Weighted adjoints are then plain transposes.

mod assembly;
mod flux;

use serde::Serialize;

pub use assembly::*;
pub use flux::{assemble_flux, Flux};

use crate::linalg::sparse::Csr;
use crate::scalar::{Field, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTag {
    Cone,
    Tube,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryClass {
    /// Symmetric scaled matrix.
    SelfAdjoint,
    /// Real antisymmetric scaled matrix S; the operator is S / (2i).
    SkewToSelfAdjoint,
    Rectangular,
}

#[derive(Clone, Debug)]
pub struct LinearOperatorMatrix<T> {
    pub matrix: Csr<T>,
    pub domain: GridTag,
    pub codomain: GridTag,
    pub class: SymmetryClass,
    pub domain_weight: Vec<T>,
    pub codomain_weight: Vec<T>,
}

/// Header written before the triplet lines of an exported matrix.
#[derive(Serialize)]
struct ExportHeader<'a> {
    rows: usize,
    cols: usize,
    nnz: usize,
    domain: GridTag,
    codomain: GridTag,
    symmetry_class: SymmetryClass,
    representation: &'static str,
    grid: &'a serde_json::Value,
    domain_weight: Vec<f64>,
    codomain_weight: Vec<f64>,
}

impl<T: Real> LinearOperatorMatrix<T> {
    pub fn square(matrix: Csr<T>, tag: GridTag, class: SymmetryClass, weight: Vec<T>) -> Self {
        LinearOperatorMatrix {
            matrix,
            domain: tag,
            codomain: tag,
            class,
            domain_weight: weight.clone(),
            codomain_weight: weight,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    /// Applies the scaled matrix.
    pub fn apply<F: Field<T>>(&self, u: &[F]) -> Vec<F> {
        self.matrix.apply(u)
    }

    /// The matrix acting on grid values: W_cod^{-1/2} M W_dom^{1/2}.
    pub fn physical(&self) -> Csr<T> {
        let left: Vec<T> = self.codomain_weight.iter().map(|w| w.sqrt().recip()).collect();
        let right: Vec<T> = self.domain_weight.iter().map(|w| w.sqrt()).collect();
        self.matrix.scale_rows_cols(Some(&left), Some(&right))
    }

    /// max |W^{1/2} M W^{-1/2} - (W^{1/2} M W^{-1/2})^T| for the physical M, i.e.
    /// the plain symmetry defect of the scaled matrix; for the skew class the
    /// defect of the self-adjoint S / (2i).
    pub fn weighted_symmetry_defect(&self) -> T {
        match self.class {
            SymmetryClass::SelfAdjoint => self.matrix.symmetry_defect(),
            SymmetryClass::SkewToSelfAdjoint => T::lit(0.5) * self.matrix.antisymmetry_defect(),
            SymmetryClass::Rectangular => T::nan(),
        }
    }

    /// Weighted adjoint (plain transpose in the scaled representation).
    pub fn adjoint(&self) -> Self {
        let matrix = match self.class {
            SymmetryClass::SkewToSelfAdjoint => self.matrix.clone(),
            _ => self.matrix.transpose(),
        };
        LinearOperatorMatrix {
            matrix,
            domain: self.codomain,
            codomain: self.domain,
            class: self.class,
            domain_weight: self.codomain_weight.clone(),
            codomain_weight: self.domain_weight.clone(),
        }
    }

    /// Sparse triplet text: one JSON header line starting with '#', then
    /// "row col value" lines of the scaled matrix.
    pub fn export_triplets(&self, grid: &serde_json::Value) -> String {
        let header = ExportHeader {
            rows: self.matrix.nrows,
            cols: self.matrix.ncols,
            nnz: self.matrix.nnz(),
            domain: self.domain,
            codomain: self.codomain,
            symmetry_class: self.class,
            representation: "scaled: u = W^(1/2) f",
            grid,
            domain_weight: self.domain_weight.iter().map(|w| w.f64()).collect(),
            codomain_weight: self.codomain_weight.iter().map(|w| w.f64()).collect(),
        };
        let mut out = format!("# {}\n", serde_json::to_string(&header).expect("header serializes"));
        for (i, j, v) in self.matrix.triplets() {
            out.push_str(&format!("{i} {j} {:.17e}\n", v.f64()));
        }
        out
    }
}

/// Scaled values W^{1/2} f.
pub fn to_scaled<T: Real, F: Field<T>>(f: &[F], weight: &[T]) -> Vec<F> {
    f.iter().zip(weight).map(|(&x, w)| x * w.sqrt()).collect()
}

/// Grid values W^{-1/2} u.
pub fn to_physical<T: Real, F: Field<T>>(u: &[F], weight: &[T]) -> Vec<F> {
    u.iter().zip(weight).map(|(&x, w)| x * w.sqrt().recip()).collect()
}
