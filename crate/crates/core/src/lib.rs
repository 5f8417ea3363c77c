//! Surrogate-driven routing and admission control for a two-service,
//! two-node service mesh.
//!
//! The pipeline collects delay traces from a synthetic ground-truth mesh,
//! fits a regression-forest surrogate, trains a clipped policy-gradient
//! agent against the surrogate for one of three management objectives and
//! scores the resulting policy against exhaustive-search optima.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod ground_truth;
pub mod io;
pub mod loadgen;
pub mod mesh;
pub mod oracle;
pub mod pipeline;
pub mod rewards;
pub mod rng;
pub mod sysmodel;

pub use error::{Error, Result};
