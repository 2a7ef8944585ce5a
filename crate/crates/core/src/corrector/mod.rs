//! Coarse-to-fine correction of a centre RS frame to its GS counterpart.

mod config;
mod pipeline;

pub use config::{CorrectorConfig, Mode, Warper};
pub use pipeline::{correct, evaluate, evaluate_frame, CorrectionResult, Metrics, INTERIOR_MARGIN};
