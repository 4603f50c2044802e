//! Library behind the `spt` binary: parameter scans, ensemble simulation,
//! fitting and single-shot detection analysis for the Rydberg single-photon
//! transistor.
//!
//! Each command writes its result files plus `<command>.provenance.json` into
//! the output directory.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 numerical
//! failure (details in `<command>.diagnostics.json`), 5 I/O failure or refused
//! overwrite.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;
pub mod failure;
pub mod output;
