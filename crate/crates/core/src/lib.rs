//! Berk-Nash equilibria for principal-agent contracts with misspecified agents.

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod fmt;
pub mod learning;
pub mod lp;
pub mod model;
pub mod optimal;
pub mod sample;
pub mod scenarios;
mod serde_ext;

pub use error::{Error, Result};
