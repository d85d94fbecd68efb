//! Risk-averse trust-region reinforcement learning for hedging vanilla calls
//! under discrete rebalancing and transaction costs.

pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod market;
pub mod policy;
pub mod pricing;

pub mod streams;
pub mod trainer;

pub use error::{Error, Result};
