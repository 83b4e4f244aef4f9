//! File formats, IO and the `toxbias` command-line driver around
//! [`toxbias_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod dataset;
mod error;
pub mod fsutil;
pub mod predictions;
pub mod replication;
pub mod reports;
pub mod vectors;

pub use error::{Error, Result};
