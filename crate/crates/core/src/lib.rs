//! Simulated distributed GraphSAGE training where boundary-node features
//! are condensed into super nodes before they cross worker boundaries,
//! with per-node error feedback to compensate the lost detail.

pub mod condense;
pub mod error;
pub mod feedback;
pub mod gnn;
pub mod graph;
pub mod numerics;
pub mod runtime;

pub use error::{Error, Result};
