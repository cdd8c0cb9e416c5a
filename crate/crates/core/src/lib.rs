//! Simulator for private personalized decentralized learning.
//!
//! Each of K nodes repeatedly picks a group of M peers, receives the mean of
//! the group's models through masked secure aggregation, merges it into its
//! own model, trains locally, and feeds the resulting validation accuracy
//! back into an adversarial bandit over the C(|N|, M) candidate groups.
//! Groups that share members share information, which the bandit exploits
//! through pseudo-rewards to prune provably uninteresting groups.

pub mod bandit;
pub mod config;
pub mod data;
pub mod error;
pub mod field;
pub mod groups;
pub mod learner;
pub mod report;
pub mod rng;
pub mod secagg;
pub mod shamir;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
