//! Single-image super-resolution with a transposed-convolution front end,
//! weight-shared recurrent residual blocks and multi-level feature fusion.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: rank-4 NCHW arrays and their structural operations.
//! * [`ops`]: convolution, transposed convolution and PReLU with analytic
//!   backward passes, plus a finite-difference gradient oracle.
//! * [`model`]: the network itself (transposed-convolution front end, two
//!   weight-shared recurrent residual blocks, multi-level fusion), its
//!   parameter registry and checkpoint format.
//! * [`data`]: luminance images, bicubic resampling, augmentation and patch
//!   archives.
//! * [`train`]: MSE loss, SGD with momentum and weight decay, adjustable
//!   gradient clipping and the staircase learning-rate schedule.
//! * [`metrics`]: PSNR/SSIM with border shaving and dataset reports.
//! * [`selftest`]: the built-in verification suite used by `drfn selftest`.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{DrfnModel, GradMap, ModelConfig};
pub use tensor::{Dims, Scalar, Tensor};
