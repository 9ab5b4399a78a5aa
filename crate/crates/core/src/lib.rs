//! Core library for geocentric pose estimation from overhead imagery.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: dense binary64 tensors, reverse-mode differentiation, Adam,
//!   and the `GPW1` checkpoint format.
//! - [`data`]: raster/label types, on-disk formats, per-city outlier
//!   cleaning, pixel-area resampling, and model-input assembly.
//! - [`scene`]: synthetic city scenes with analytically exact pose labels.
//! - [`model`]: the elevation U-Net, the scale/angle regressor, and the
//!   autoencoder, all built on [`tensor`].
//! - [`train`]: dataset splitting, the training loop with early stopping,
//!   and model-based NaN interpolation.
//! - [`metrics`]: regression metrics, the cumulative score, and the
//!   sensitivity analysis with its difference-in-proportions test.
//! - [`mds`]: classical multidimensional scaling for latent-space maps.

pub mod data;
pub mod error;
pub mod mds;
pub mod metrics;
pub mod model;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
