//! Multi-contrast MRI super-resolution with a multi-stage integration network.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a reverse-mode tape
//!   covering exactly the operations the network needs.
//! - [`model`]: the two-branch network, its parameters, loss and checkpoints.
//! - [`data`]: synthetic paired T1/T2 phantoms, degradation to low resolution,
//!   bicubic interpolation, dataset splits and on-disk samples.
//! - [`train`]: Adam, image quality metrics, training, evaluation, ablations.
//! - [`gradcheck`]: central finite-difference checks for ops and modules.
//! - [`figures`]: line plots and image panels for PGM export.

pub mod alloc;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod figures;
pub mod gradcheck;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
