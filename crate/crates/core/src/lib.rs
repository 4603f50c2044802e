//! Simulation and analysis toolkit for a two-color Rydberg-EIT single-photon
//! transistor.
//!
//! The crate is split along the analysis pipeline:
//!
//! - [`models`]: closed-form switch contrast, storage, gain and source
//!   saturation formulas.
//! - [`montecarlo`]: seeded photon-counting simulation of the full pulse
//!   sequence (gate storage, source window, detection).
//! - [`fitting`]: least-squares recovery of optical depths and saturation
//!   parameters with bootstrap intervals.
//! - [`detection`]: Poisson-mixture histogram decomposition and single-shot
//!   discrimination thresholds.
//!
//! All randomness flows through [`rng`], which derives independent,
//! reproducible streams from a 64-bit master seed.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod fitting;
pub mod models;
pub mod montecarlo;
pub mod rng;
pub(crate) mod stats;

pub use error::{Error, Result};
