//! Multi-task toxicity classification with identity auxiliary heads, and the
//! unintended-bias evaluation suite (Subgroup AUC, BPSN AUC, generalized mean
//! of bias AUCs).
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File formats, the CLI and anything touching the filesystem live in the
//! `toxbias` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod embed;
mod error;
pub mod loss;
mod math;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod templates;
pub mod train;

pub use error::{Error, Result};
