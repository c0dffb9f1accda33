//! Scenario-driven deterministic simulation: configuration, the tick loop,
//! and the run report.

mod report;
mod runner;
mod scenario;

pub use report::*;
pub use runner::{node_chain_key, node_idl_key, run, Simulation};
pub use scenario::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
    #[error("genesis failed: {0}")]
    Genesis(#[from] crate::chain::ChainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
