//! Reconstruction of a spatially varying shear modulus from interior
//! time-harmonic displacement data governed by a variable-coefficient Stokes
//! system, together with numerical checks of the ellipticity conditions that
//! make the reconstruction stable.

pub mod diff;
pub mod certificates;
pub mod error;
pub mod fields;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod linsolve;
pub mod norms;
pub mod par;
pub mod phantoms;
pub mod residual;
pub mod stokes;

pub use error::{Error, Result};
pub use fields::{ScalarField, SymTensorField, VectorField};
pub use grid::Grid;

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
