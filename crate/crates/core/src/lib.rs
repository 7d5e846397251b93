//! Multi-vehicle intersection simulator with barrier-function-informed rewards,
//! heuristic baseline rewards, a posterior safety filter used as a measurement
//! instrument, and a small multi-agent PPO trainer.

pub mod cbf;
pub mod collision;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod marl;
pub mod plot;
pub mod rewards;

pub use error::{Error, Result};
