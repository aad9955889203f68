//! Portable inference, int8 quantization and deployment arithmetic for
//! generalized U-Net segmentation networks.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: file formats, wall clocks and the command line live in the
//! `edgeunet` companion crate.
//!
//! A generalized U-Net is described by a [`ModelSpec`] such as `6/64/Y/1.1`
//! (levels / first-stage filters / normalization / increment ratio).
//! [`build_graph`] turns it into a layer DAG, [`generate_random_weights`] or a
//! weight file supplies parameters, and [`engine::run_float`] or
//! [`engine::run_quant`] execute it.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod bench;
pub mod datagen;
pub mod engine;
mod error;
pub mod mask;
pub mod metrics;
pub mod planner;
pub mod quant;
pub mod tensor;
pub mod unet;
pub mod weights;

pub use error::{Error, Result};
pub use mask::Mask;
pub use tensor::Tensor;
pub use unet::{build_graph, count_params, Graph, ModelSpec};
pub use weights::{generate_random_weights, WeightSet};

/// Round half away from zero. The single rounding rule used by every
/// quantization step in the crate.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}
