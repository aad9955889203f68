//! File formats, dataset IO, a wall clock and the command line for
//! [`edgeunet_core`].
//!
//! * [`uew`]: the UEW weight-file format (float and quantized).
//! * [`pnm`]: binary PPM images and PGM masks.
//! * [`dataset`]: synthetic dataset export and image-directory loading.
//! * [`cli`]: the `edgeunet` command.

pub mod cli;
pub mod clock;
pub mod dataset;
mod error;
pub mod pnm;
pub mod uew;

pub use edgeunet_core as core;
pub use error::{Error, Result};
