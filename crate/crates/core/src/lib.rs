//! Learned decoding adapters over a frozen stochastic token generator.

pub mod actions;
pub mod categorical;
pub mod env;
pub mod harness;
pub mod error;
pub mod net;
pub mod policy;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
