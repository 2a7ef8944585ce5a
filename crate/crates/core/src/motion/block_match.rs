use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::motion::Flow;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockMatchParams {
    /// Search radius: displacements in `[-radius, radius]²`.
    pub radius: usize,
    /// Patch half-width.
    pub patch: usize,
    /// Grid spacing in pixels.
    pub stride: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            radius: 3,
            patch: 2,
            stride: 4,
        }
    }
}

/// Integer SAD block matching on a coarse grid, bilinearly upsampled to a
/// dense flow from `a` to `b`. Ties prefer smaller `|d|`, then smaller
/// `(dy, dx)` lexicographically.
pub fn block_match_flow<T: Scalar>(
    a: &Frame<T>,
    b: &Frame<T>,
    params: BlockMatchParams,
) -> Result<Flow<T>> {
    a.ensure_same_shape(b, "block_match_flow")?;
    if params.patch == 0 || params.stride == 0 {
        return invalid("block matching needs patch >= 1 and stride >= 1");
    }
    let (h, w, c) = a.dims();
    let (gh, gw) = ((h - 1) / params.stride + 1, (w - 1) / params.stride + 1);
    let r = params.radius as isize;
    let p = params.patch as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let grid: Vec<(isize, isize)> = (0..gh * gw)
        .into_par_iter()
        .map(|g| {
            let (cy, cx) = (
                ((g / gw) * params.stride) as isize,
                ((g % gw) * params.stride) as isize,
            );
            let mut best: Option<(T, isize, isize, isize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = T::zero();
                    for oy in -p..=p {
                        for ox in -p..=p {
                            let pa = a.pixel(clamp(cy + oy, h), clamp(cx + ox, w));
                            let pb = b.pixel(clamp(cy + oy + dy, h), clamp(cx + ox + dx, w));
                            for ch in 0..c {
                                sad += (pa[ch] - pb[ch]).abs();
                            }
                        }
                    }
                    let norm = dx * dx + dy * dy;
                    let better = match best {
                        None => true,
                        Some((bs, bn, by, bx)) => {
                            sad < bs || (sad == bs && (norm, dy, dx) < (bn, by, bx))
                        }
                    };
                    if better {
                        best = Some((sad, norm, dy, dx));
                    }
                }
            }
            let (_, _, dy, dx) = best.expect("search window is non-empty");
            (dx, dy)
        })
        .collect();
    let stride = T::from_usize_lossy(params.stride);
    let sample = |gy: T, gx: T, pick: fn(&(isize, isize)) -> isize| -> T {
        let gy = gy.min(T::from_usize_lossy(gh - 1));
        let gx = gx.min(T::from_usize_lossy(gw - 1));
        let y0 = gy.floor().to_usize().unwrap_or(0).min(gh - 1);
        let x0 = gx.floor().to_usize().unwrap_or(0).min(gw - 1);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (fy, fx) = (gy - T::from_usize_lossy(y0), gx - T::from_usize_lossy(x0));
        let val = |yy: usize, xx: usize| T::from_isize(pick(&grid[yy * gw + xx])).expect("small int");
        let one = T::one();
        (one - fy) * ((one - fx) * val(y0, x0) + fx * val(y0, x1))
            + fy * ((one - fx) * val(y1, x0) + fx * val(y1, x1))
    };
    Ok(Flow::from_fn(h, w, |y, x| {
        let gy = T::from_usize_lossy(y) / stride;
        let gx = T::from_usize_lossy(x) / stride;
        (sample(gy, gx, |d| d.0), sample(gy, gx, |d| d.1))
    }))
}
