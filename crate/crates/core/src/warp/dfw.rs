//! Differentiable forward warping: every source pixel splats to the four
//! integer neighbours of its displaced position with bilinear weights, and
//! the accumulated colour is normalised by the accumulated weight.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::Frame;
use crate::motion::Flow;
use crate::warp::WarpOutput;
use crate::Scalar;

/// Accumulated weight at or below which a pixel counts as a hole.
pub const DFW_EPS: f64 = 1e-6;

/// Splat targets of one source pixel: `(target index, weight, dw/dx, dw/dy)`.
#[inline]
fn splat<T: Scalar>(w: usize, h: usize, px: T, py: T) -> [(Option<usize>, T, T, T); 4] {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let one = T::one();
    let x0 = x0f.to_i64().unwrap_or(i64::MIN / 2);
    let y0 = y0f.to_i64().unwrap_or(i64::MIN / 2);
    let mut out = [(None, T::zero(), T::zero(), T::zero()); 4];
    for (k, (a, b)) in [(0i64, 0i64), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        let (nx, ny) = (x0 + a, y0 + b);
        let wx = if a == 1 { fx } else { one - fx };
        let wy = if b == 1 { fy } else { one - fy };
        let sx = if a == 1 { one } else { -one };
        let sy = if b == 1 { one } else { -one };
        let idx = if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
            Some(ny as usize * w + nx as usize)
        } else {
            None
        };
        out[k] = (idx, wx * wy, sx * wy, sy * wx);
    }
    out
}

struct Splatted<T> {
    acc: Vec<T>,
    wsum: Vec<T>,
}

fn accumulate<T: Scalar>(frame: &Frame<T>, field: &Flow<T>) -> Splatted<T> {
    let (h, w, c) = frame.dims();
    let mut acc = vec![T::zero(); h * w * c];
    let mut wsum = vec![T::zero(); h * w];
    // fixed source order keeps the floating-point sums reproducible
    for y in 0..h {
        for x in 0..w {
            let (u, v) = field.get(y, x);
            let src = frame.pixel(y, x);
            let targets = splat(
                w,
                h,
                T::from_usize_lossy(x) + u,
                T::from_usize_lossy(y) + v,
            );
            for (idx, wt, _, _) in targets {
                if let Some(n) = idx {
                    wsum[n] += wt;
                    for ch in 0..c {
                        acc[n * c + ch] += wt * src[ch];
                    }
                }
            }
        }
    }
    Splatted { acc, wsum }
}

pub fn dfw_forward_warp<T: Scalar>(frame: &Frame<T>, field: &Flow<T>) -> Result<WarpOutput<T>> {
    field.ensure_matches(frame, "dfw_forward_warp")?;
    let (h, w, c) = frame.dims();
    let Splatted { acc, wsum } = accumulate(frame, field);
    let eps = T::lit(DFW_EPS);
    let mut data = vec![T::zero(); h * w * c];
    let mut validity = vec![T::zero(); h * w];
    for n in 0..h * w {
        let s = wsum[n];
        validity[n] = s.min(T::one());
        if s > eps {
            for ch in 0..c {
                data[n * c + ch] = acc[n * c + ch] / s;
            }
        }
    }
    Ok(WarpOutput {
        frame: Frame::new(h, w, c, data)?,
        validity,
        attention: None,
    })
}

/// Gradient with respect to the field of
/// `Σ up_frame ⊙ out.frame + Σ up_validity ⊙ out.validity`.
pub fn dfw_grad<T: Scalar>(
    frame: &Frame<T>,
    field: &Flow<T>,
    up_frame: &Frame<T>,
    up_validity: Option<&[T]>,
) -> Result<Flow<T>> {
    field.ensure_matches(frame, "dfw_grad")?;
    frame.ensure_same_shape(up_frame, "dfw_grad upstream")?;
    let (h, w, c) = frame.dims();
    if let Some(uv) = up_validity {
        if uv.len() != h * w {
            return Err(crate::Error::InvalidArgument(format!(
                "validity upstream has {} entries, expected {}",
                uv.len(),
                h * w
            )));
        }
    }
    let Splatted { acc, wsum } = accumulate(frame, field);
    let eps = T::lit(DFW_EPS);
    // dL/dacc and dL/dwsum per target pixel
    let mut g_acc = vec![T::zero(); h * w * c];
    let mut g_wsum = vec![T::zero(); h * w];
    for n in 0..h * w {
        let s = wsum[n];
        if s > eps {
            let mut gw = T::zero();
            for ch in 0..c {
                let g = up_frame.data()[n * c + ch];
                g_acc[n * c + ch] = g / s;
                gw -= g * acc[n * c + ch] / (s * s);
            }
            g_wsum[n] = gw;
        }
        if let Some(uv) = up_validity {
            if s < T::one() {
                g_wsum[n] += uv[n];
            }
        }
    }
    let rows: Vec<Vec<(T, T)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (u, v) = field.get(y, x);
                    let src = frame.pixel(y, x);
                    let targets = splat(
                        w,
                        h,
                        T::from_usize_lossy(x) + u,
                        T::from_usize_lossy(y) + v,
                    );
                    let (mut gu, mut gv) = (T::zero(), T::zero());
                    for (idx, _, dwdx, dwdy) in targets {
                        if let Some(n) = idx {
                            let mut gwt = g_wsum[n];
                            for ch in 0..c {
                                gwt += g_acc[n * c + ch] * src[ch];
                            }
                            gu += gwt * dwdx;
                            gv += gwt * dwdy;
                        }
                    }
                    (gu, gv)
                })
                .collect()
        })
        .collect();
    let (u, v) = rows.into_iter().flatten().unzip();
    Flow::new(h, w, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_field_is_identity_with_full_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Frame::<f64>::from_fn(6, 7, 3, |_, _, _| rng.gen());
        let out = dfw_forward_warp(&f, &Flow::zeros(6, 7)).unwrap();
        assert_eq!(out.frame, f);
        assert!(out.validity.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_downward_shift_leaves_holes_on_top() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Frame::<f64>::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.1..1.0));
        let out = dfw_forward_warp(&f, &Flow::constant(8, 8, 0.0, 3.0)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if y < 3 {
                    assert_eq!(out.validity[y * 8 + x], 0.0);
                    assert_eq!(out.frame.get(y, x, 0), 0.0);
                } else {
                    assert_eq!(out.validity[y * 8 + x], 1.0);
                    assert_eq!(out.frame.get(y, x, 0), f.get(y - 3, x, 0));
                }
            }
        }
    }

    #[test]
    fn injective_integer_field_preserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Frame::<f64>::from_fn(6, 6, 1, |_, _, _| rng.gen());
        // transpose permutation
        let field = Flow::from_fn(6, 6, |y, x| (y as f64 - x as f64, x as f64 - y as f64));
        let out = dfw_forward_warp(&f, &field).unwrap();
        let total_in: f64 = f.data().iter().sum();
        let total_out: f64 = out
            .frame
            .data()
            .iter()
            .zip(&out.validity)
            .map(|(v, m)| v * m)
            .sum();
        assert!((total_in - total_out).abs() < 1e-12);
        assert!(out.validity.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_upstream_and_flat_frame_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Frame::<f64>::filled(5, 5, 2, 0.7);
        let field = Flow::from_fn(5, 5, |_, _| (rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)));
        let g = dfw_grad(&f, &field, &Frame::zeros(5, 5, 2), None).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&v| v == 0.0));
        let up = Frame::from_fn(5, 5, 2, |_, _, _| rng.gen());
        let g = dfw_grad(&f, &field, &up, None).unwrap();
        // normalised splats of a constant stay constant wherever weight > eps
        assert!(g.u.iter().chain(&g.v).all(|&v| v.abs() < 1e-12));
    }
}
