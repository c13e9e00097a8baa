//! Training, evaluation, file formats and the command line for BANet
//! portrait segmentation. The numerical core lives in `banet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod oracle;
pub mod synth;
pub mod train;

pub use banet_core as core;
pub use error::{BanetError, Result};
