//! Finite-element laboratory for optimal control of semilinear elliptic
//! equations with box constraints, with tools to probe second-order
//! sufficient conditions and the Lipschitz stability of optimal controls
//! under perturbations.

pub mod cli;
pub mod control;
pub mod diagnostics;
pub mod error;
pub mod mesh;
pub mod optimizer;
pub mod pde;
pub mod sparse;
pub mod stability;

pub use error::{Error, Result};
pub use mesh::{Mesh, MeshId, NodalField, NormKind};
pub use pde::{CoefficientSet, NewtonConfig, NewtonReport};
pub use control::{AdjointPack, ControlPoint, Perturbation, ProblemData};
