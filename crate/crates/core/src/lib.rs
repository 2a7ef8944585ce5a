//! Rolling-shutter simulation and correction by multi-field attention warping.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod corrector;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod motion;
pub mod opt;
mod scalar;
pub mod sim;
pub mod warp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Frame32 = image::Frame<f32>;
pub type Frame64 = image::Frame<f64>;
pub type Flow64 = motion::Flow<f64>;
pub type FieldBundle64 = motion::FieldBundle<f64>;
