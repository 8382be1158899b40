//! Particle-memory continual learning with contextual gating,
//! crystallization and cross-context verification.

pub mod baselines;
pub mod calibration;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod geometry;
pub mod harness;
pub mod policy;
pub mod protocol;
pub mod rrw;
pub mod toy;

pub use error::{Error, Result};
