//! Decentralized oracle network: peer reputation, an internal consensus
//! ledger, commit-reveal pulses signed K-of-N, in-memory target chains with
//! system, nebula and user contracts, reward distribution, and a seeded
//! simulator that drives them tick by tick.

pub mod chain;
pub mod crypto;
pub mod economy;
pub mod extractor;
pub mod ledger;
pub mod node;
pub mod reputation;
pub mod sim;
pub mod types;

pub use chain::{ChainConfig, ChainError, TargetChain};
pub use crypto::{Digest, KeyPair, Proof, PublicKey};
pub use ledger::{Ledger, LedgerError};
pub use reputation::{EigenTrustParams, GravityScore};
pub use sim::{run, RunOutputs, RunReport, Scenario, SimError, Simulation};
pub use types::*;
