//! Federated learning simulator built around quadruplet-loss local training.
//!
//! Clients train an MLP encoder plus classifier head on their own data shard
//! with a combined cross-entropy + quadruplet objective; the server averages
//! the local models weighted by shard size. Everything runs in-process and is
//! fully determined by the configured seed.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod sampling;

pub use error::{FedQuadError, Result};
pub use numerics::{Parameter, Tensor};
