//! Core algorithms for boundary-aware portrait segmentation.
//!
//! Everything here is pure computation over owned buffers and builds without
//! the standard library (only `alloc` is required). File formats, training
//! orchestration, and the command line live in the `banet` crate.
//!
//! Module map:
//!
//! - [`raster`]: images, scalar maps, min-max normalization, bilinear resizing.
//! - [`boundary`]: semantic edges and area-adaptive dilated boundary targets.
//! - [`gradient`]: the Sobel gradient calculation layer and its adjoint.
//! - [`loss`]: segmentation, boundary-attention, and refine losses.
//! - [`tensor`], [`nn`], [`model`]: a small NCHW engine and the two-branch network.
//! - [`optim`]: warm-up learning-rate schedule and SGD with momentum.
//! - [`augment`]: paired geometric/photometric augmentation and padding.
//! - [`metrics`]: intersection-over-union.
#![no_std]

extern crate alloc;
#[cfg(test)]
#[macro_use]
extern crate std;

pub mod augment;
pub mod boundary;
mod error;
pub mod gradient;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod raster;
pub mod tensor;

pub use error::{Error, Result};
