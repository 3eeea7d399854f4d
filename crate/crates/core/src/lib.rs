//! Channel-wise knowledge distillation for dense prediction.
//!
//! The crate bundles a small `f64` tensor kernel, the catalogue of
//! distillation losses with analytic gradients, a finite-difference oracle,
//! toy teacher/student segmentation networks, a synthetic dataset, and the
//! training loop used to compare the losses.

pub mod data;
pub mod dump;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use tensor::{LabelMap, Shape4, Tensor4};
