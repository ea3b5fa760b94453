//! Branching random walks in the boundary case under killing and selection.

pub mod curves;
pub mod engine;
pub mod error;
pub mod gw;
pub mod harness;
pub mod laws;
pub mod profile;
pub mod quad;
pub mod seed;
pub mod spine;
pub mod stats;
pub mod walks;

pub use error::{Error, Result};
