//! Enriched hybrid high-order discretisation of the Stokes equations on
//! Cartesian meshes with circular cylinders cut out.

pub mod analytic;
pub mod assembly;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod local_ops;
pub mod quadrature;
pub mod spaces;

pub use error::{Error, Result};
pub use geometry::{build_cartesian_cut_mesh, validate_mesh, Circle, Mesh, Point2};
pub use assembly::{condense_and_solve, relative_errors, DiscreteSolution, Discretization, StokesProblem};
pub use experiments::{ErrorReport, ExperimentConfig, TestKind};
pub use spaces::EnrichmentConfig;
