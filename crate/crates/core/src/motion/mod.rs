//! Inter-frame motion: correlation volumes, block-matching flow and the
//! multi-field displacement bundle.

mod block_match;
mod bundle;
mod correlation;
mod flow;

pub use block_match::{block_match_flow, BlockMatchParams};
pub use bundle::{
    displacement_from_velocity, init_bundle, jitter_offsets, upsample_bundle, upsample_bundle_to,
    FieldBundle, WeightStats,
};
pub use correlation::{correlation_volume, CorrelationVolume};
pub use flow::Flow;
