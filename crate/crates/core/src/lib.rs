//! Numerical laboratory for the three-bridge Neumann domain `D(ε)`.
//!
//! The crate builds the domain exactly, meshes it symmetrically, solves the
//! Neumann Laplacian eigenproblem with P1 finite elements and checks the
//! qualitative claims about the second eigenfunction (bridged nodal line,
//! simple eigenvalue, interior maximum at the origin), alongside a Monte Carlo
//! simulator for reflected Brownian motion in the same domain.

pub mod analysis;
pub mod error;
pub mod export;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod rbm;

pub use error::{Error, Result};
pub use geometry::{DomainSpec, Point2, PolygonWithSlit, RegionLabel, SymmetryElement};
pub use mesh::{Mesh, SizeField};
