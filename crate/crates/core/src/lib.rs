//! Federated-learning simulation and membership-inference analysis.
//!
//! The crate simulates FedAvg training over partitioned clients while a
//! passive observer records one client's uploaded models, then measures
//! how much membership signal those snapshots leak: per-sample score
//! trajectories feed a convolutional time-series classifier, and a
//! gradient-based single-snapshot attack provides the reference point,
//! with parameter/memory/compute accounting for both.

pub mod attack;
pub mod baseline;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod features;
pub mod fl;
pub mod seed;

pub use error::{Error, Result};
