//! Precoding laboratory for multi-user LEO satellite downlinks: channel and
//! CSIT-error simulation, analytical MMSE and robust SLNR precoders, and a
//! Soft Actor-Critic learner trained directly on simulated sum rates.

pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod precoders;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
