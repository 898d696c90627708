//! Simulator for LSH-verified federated learning with masked aggregation and
//! reputation-driven role election.

pub mod election;
pub mod error;
pub mod exec;
pub mod fixed;
pub mod learner;
pub mod lshgm;
pub mod masking;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub type NodeId = u32;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::{GradientUpdate, Matrix, ModelShape, ShapeId, ShapeRegistry};
