//! Randomized-smoothing certification with per-input smoothing scales.
//!
//! The crate is organised bottom-up:
//!
//! * [`numeric`]: normal CDF/quantile and exact binomial statistics.
//! * [`classifiers`]: the base-classifier abstraction plus analytic built-ins.
//! * [`smoothing`]: Monte Carlo prediction, sound ℓ2/ℓ1 certification and the
//!   plug-in radius used during optimization.
//! * [`sigma_opt`]: per-input gradient ascent on the smoothing scale and the
//!   grid-search baseline.
//! * [`memory`]: the store of certified regions that keeps differently
//!   predicted regions disjoint.
//! * [`pipeline`]: datasets, campaigns, training, metrics, reports and the CLI.

pub mod error;
pub mod classifiers;
pub mod memory;
pub mod numeric;
pub mod pipeline;
pub mod sigma_opt;
pub mod smoothing;

pub use error::{Error, Result};
