//! Sequential probability ratio tests for multi-hypothesis decisions on
//! Levy-driven observations, with super/sub-solution threshold envelopes.

pub mod cli;
pub mod config;
pub mod decision;
pub mod error;
pub mod format;
pub mod generators;
pub mod levy_sim;
pub mod likelihood;
pub mod market;
pub mod measure;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod supersub;
pub mod thresholds;

pub use error::{Error, Result};
