//! Offline reinforcement learning on tabular MDPs with an uncertainty-gated
//! mix of expert and state-of-the-art demonstrations.

pub mod analysis;
pub mod critic;
pub mod dataset;
pub mod env;
pub mod error;
pub mod mdp;
pub mod neural;
pub mod sampler;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
