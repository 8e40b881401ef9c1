//! Volume-preserving dynamics of discrete membranes and filaments.
//!
//! A closed polygonal curve or triangulated surface carries a pressure field
//! that enforces local conservation of vertex measure. The crate provides the
//! discrete geometry, the constraint operators, the Hodge-type decomposition
//! of ambient velocity fields, Lagrangian forces, a constrained time stepper
//! and an independent dense oracle used for verification.

pub mod decomposition;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod field;
pub mod geometry;
pub mod io;
pub mod lagrangian;
pub mod mesh;
pub mod operators;
pub mod oracle;
pub mod scenario;
pub mod shapes;
pub mod sparse;

pub use decomposition::{decompose, decompose_batch, decompose_with, project, DecompositionResult, DecomposeOptions, SolverKind};
pub use error::{MembraneError, Result};
pub use field::{AmbientField, ScalarField, Vec3};
pub use geometry::{build_geometry, density, density_derivative, split_tangent_normal, GeometryCache};
pub use mesh::{EmbeddedMesh, MeshKind};
pub use operators::{build_operators, OperatorSet};
