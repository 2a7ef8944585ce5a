//! Rolling-shutter image formation from parametric scenes.

mod render;
mod scene;
pub mod suite;
mod texture;
mod timing;

pub use render::{gt_displacement, make_sequence, render_gs, render_rs, FramePair};
pub use scene::{LayerParams, SceneParams, SceneSpec};
pub use texture::{procedural_texture, TextureParams};
pub use timing::TimeOffsetMap;
