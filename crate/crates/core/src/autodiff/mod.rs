//! Dense reverse-mode differentiation and the Adam optimizer.

pub mod adam;
pub mod graph;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId, Op, PROB_EPS};
pub use params::ParamSet;
