use rayon::prelude::*;

use crate::error::Result;
use crate::image::{Frame, Taps};
use crate::motion::Flow;
use crate::Scalar;

/// `out(x) = F(x + U(x))`, bilinear with clamp-to-edge.
pub fn backward_warp<T: Scalar>(frame: &Frame<T>, field: &Flow<T>) -> Result<Frame<T>> {
    field.ensure_matches(frame, "backward_warp")?;
    let (h, w, c) = frame.dims();
    let mut out = Frame::zeros(h, w, c);
    out.data_mut()
        .par_chunks_mut(w * c)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let (u, v) = field.get(y, x);
                let px = T::from_usize_lossy(x) + u;
                let py = T::from_usize_lossy(y) + v;
                frame.sample_into(px, py, &mut row[x * c..(x + 1) * c]);
            }
        });
    Ok(out)
}

/// Gradient of `Σ upstream ⊙ backward_warp(F, U)` with respect to `U`.
pub fn backward_warp_grad<T: Scalar>(
    frame: &Frame<T>,
    field: &Flow<T>,
    upstream: &Frame<T>,
) -> Result<Flow<T>> {
    field.ensure_matches(frame, "backward_warp_grad")?;
    frame.ensure_same_shape(upstream, "backward_warp_grad upstream")?;
    let (h, w, c) = frame.dims();
    let rows: Vec<Vec<(T, T)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut dx = vec![T::zero(); c];
            let mut dy = vec![T::zero(); c];
            (0..w)
                .map(|x| {
                    let (u, v) = field.get(y, x);
                    let taps = Taps::new(
                        w,
                        h,
                        T::from_usize_lossy(x) + u,
                        T::from_usize_lossy(y) + v,
                    );
                    taps.gather_grad(frame, &mut dx, &mut dy);
                    let g = upstream.pixel(y, x);
                    let mut gu = T::zero();
                    let mut gv = T::zero();
                    for ch in 0..c {
                        gu += g[ch] * dx[ch];
                        gv += g[ch] * dy[ch];
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

    fn rand_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame<f64> {
        Frame::from_fn(h, w, c, |_, _, _| rng.gen())
    }

    #[test]
    fn zero_field_is_bit_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_frame(&mut rng, 7, 9, 3);
        assert_eq!(backward_warp(&f, &Flow::zeros(7, 9)).unwrap(), f);
    }

    #[test]
    fn integer_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = rand_frame(&mut rng, 6, 8, 1);
        let out = backward_warp(&f, &Flow::constant(6, 8, -2.0, 0.0)).unwrap();
        for y in 0..6 {
            for x in 2..8 {
                assert_eq!(out.get(y, x, 0), f.get(y, x - 2, 0));
            }
        }
    }

    #[test]
    fn matches_per_pixel_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_frame(&mut rng, 6, 6, 2);
        let field = Flow::from_fn(6, 6, |_, _| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
        let out = backward_warp(&f, &field).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let (u, v) = field.get(y, x);
                let s = f.sample(x as f64 + u, y as f64 + v).unwrap();
                assert_eq!(out.pixel(y, x), s.as_slice());
            }
        }
    }

    #[test]
    fn degenerate_gradients_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_frame(&mut rng, 5, 5, 3);
        let field = Flow::from_fn(5, 5, |_, _| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let g = backward_warp_grad(&f, &field, &Frame::zeros(5, 5, 3)).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&v| v == 0.0));
        let flat = Frame::filled(5, 5, 3, 0.4);
        let up = rand_frame(&mut rng, 5, 5, 3);
        let g = backward_warp_grad(&flat, &field, &up).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch() {
        let f = Frame::<f64>::zeros(4, 4, 1);
        assert!(backward_warp(&f, &Flow::zeros(4, 5)).is_err());
        assert!(backward_warp_grad(&f, &Flow::zeros(4, 4), &Frame::zeros(4, 4, 3)).is_err());
    }
}
