//! Attention-fused multipath semantic segmentation on a small, self-contained
//! deep-learning core.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode autodiff tape and finite-difference checks.
//! - [`nn`]: convolution, batch norm, pooling, upsampling, softmax and loss kernels.
//! - [`params`]: named parameter storage and the `AFCK` checkpoint format.
//! - [`arch`]: attention blocks, backbones and the six segmentation variants.
//! - [`train`]: losses, Adam, the warm-up/step schedule, augmentation and the training loop.
//! - [`geodata`]: rasters, normalization, NDVI, mirrored tiling, stitching and test-time augmentation.
//! - [`metrics`]: confusion matrices, accuracy/F1 metrics and reports.
//! - [`verify`]: the finite-difference gradient suite.
//! - [`config`] and [`cli`]: run configuration and the `afnet` command implementations.

// Index loops mirror the kernel math; `!(a < b)` comparisons deliberately catch NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geodata;
pub mod metrics;
pub mod arch;
pub mod cli;
pub mod config;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, Tensor, Var};
