//! Objective terms and the first-order optimiser.

mod adam;
mod loss;
mod trace;

pub use adam::{cosine_lr, AdamConfig, OptimizerState};
pub use loss::{charbonnier, tv_loss, LossConfig, TvPenalty};
pub use trace::{write_loss_trace, LossRecord, LOSS_TRACE_HEADER};
