//! Camera-based display measurement with per-pixel uncertainty.
//!
//! Raw exposure stacks are merged, deconvolved, flat-fielded, resampled onto
//! the display grid and colour-corrected; every step carries a variance (or a
//! 3x3 covariance) alongside the mean. A structural visual-difference
//! predictor scores the result, and a forward simulator supplies ground truth
//! for testing every inverse stage.

pub mod color;
pub mod defects;
pub mod error;
pub mod fft;
pub mod formats;
pub mod geometry;
pub mod hdr;
pub mod image;
pub mod lm;
pub mod mcvalidate;
pub mod mtf;
pub mod noise;
pub mod pipeline;
pub mod simulate;
pub mod ufi;
pub mod vdp;
pub mod vignette;

pub use error::{Error, Result};
pub use image::{CoordFrame, ImagePlane, Point, UncertainImage, Uncertainty};
