//! Frames, bilinear sampling, pyramids and quality metrics.

mod frame;
pub mod metrics;
mod pyramid;

pub use frame::Frame;
pub(crate) use frame::Taps;
pub use metrics::{mse, psnr, ssim, PSNR_CAP_DB};
pub use pyramid::{build_pyramid, downsample2, Pyramid, MIN_LEVEL_SIDE};

use crate::error::Result;
use crate::Scalar;

/// Free-function form of [`Frame::sample`]; clamp-to-edge border.
pub fn bilinear_sample<T: Scalar>(frame: &Frame<T>, x: T, y: T) -> Result<Vec<T>> {
    frame.sample(x, y)
}
