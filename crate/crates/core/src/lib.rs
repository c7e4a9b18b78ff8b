//! Mass-conserving mixed stress discretization of incompressible flow with
//! a velocity-correction splitting and adaptive high-order upwinding.

pub mod checkpoint;
pub mod error;
pub mod fespace;
pub mod forms;
pub mod hopu;
pub mod linsolve;
pub mod mesh;
pub mod poly;
pub mod splitting;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use fespace::{build_spaces, Discretization, SpaceKind};
pub use hopu::{EtaThresholds, FacetOrder, OrderField};
pub use linsolve::SolverReport;
pub use mesh::{build_box_mesh, BoundaryKind, FacetTag, Mesh, MeshSpec};
pub use splitting::{Splitter, State, TimeParams};
pub use stats::kinetic_energy;
