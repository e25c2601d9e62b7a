//! Nested-dissection direct solver for p-version finite-element systems.
//!
//! The pipeline is: [`mesh`] generates element matrices, [`tree`] organises
//! them in an octree and decides where every DOF is eliminated, [`solver`]
//! condenses the tree bottom-up and back-substitutes top-down, and
//! [`scheduler`] runs the same condensation tasks through a master/trader/worker
//! protocol whose traces [`metrics`] turns into working indices.

pub mod error;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod scheduler;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
