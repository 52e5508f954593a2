//! Time-encoding (EnK) convolution and the pieces needed to study it.
//!
//! The EnK convolution adds a linearly increasing offset `(q + 1) * b` to
//! the kernel while it slides across output column `q`, with one learnable
//! scalar `b` per layer. This crate provides:
//!
//! - [`tensor`]: dense row-major arrays,
//! - [`conv`]: standard and time-encoded convolution, forward and backward,
//! - [`nn`]: layers, graph execution, cross-entropy, Adam, checkpoints,
//! - [`zoo`]: three toy CNN families built plain, with EnK or with noise,
//! - [`data`]: synthetic ERP-style epochs, the epoch file format, CSV import,
//! - [`metrics`]: confusion matrices, accuracy, weighted F1,
//! - [`gradcam`]: gradient-weighted class activation maps,
//! - [`gradcheck`]: finite-difference checks of every analytic gradient.

mod binio;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Element, Shape2D, Tensor};
