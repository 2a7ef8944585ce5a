//! Warping operators: backward (gather), differentiable forward splatting,
//! and the adaptive multi-head attention warp, each with analytic gradients.

mod attention;
mod backward;
mod dfw;

pub use attention::{
    ada_msa_grad, ada_msa_grad_query, ada_msa_warp, ada_msa_warp_query, AdaMsaGrads, AttentionMaps,
    AttentionParams,
};
pub use backward::{backward_warp, backward_warp_grad};
pub use dfw::{dfw_forward_warp, dfw_grad, DFW_EPS};

use crate::image::Frame;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpOutput<T> {
    pub frame: Frame<T>,
    /// Per-pixel coverage in [0,1]; all ones except for forward splatting.
    pub validity: Vec<T>,
    /// Softmax weights, attention warp only.
    pub attention: Option<AttentionMaps<T>>,
}
