//! Finite-element machinery for the SPDE representation of a Matérn field
//! with smoothness one: triangular meshes, lumped-mass FEM matrices, the
//! sparse precision `Q_kappa`, and the barycentric projector to data sites.

mod fem;
mod mesh;
mod precision;
mod projector;

pub use fem::{assemble_fem, FemMatrices};
pub use mesh::{auto_mesh, auto_mesh_padded, load_mesh, parse_mesh, regular_mesh, BoundingBox, Mesh};
pub use precision::{build_precision, gmrf_sample, PrecisionBuilder, SparsePrecision};
pub use projector::{build_projector, locate, Projector};
