//! Off-the-grid edge learning and restoration from Fourier samples.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod edges;
pub mod error;
mod fft;
pub mod forward;
pub mod framebank;
pub mod grid;
pub mod hankel;
pub mod image;
pub mod learn;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod restore;

pub use error::{Error, Result};
pub use grid::{make_grid, GradientSpectrum, Index2, IndexGrid, SpectralImage};
