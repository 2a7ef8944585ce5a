use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::Scalar;

/// Smallest side any pyramid level may have.
pub const MIN_LEVEL_SIDE: usize = 8;

/// Multi-scale stack; level 0 is full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    levels: Vec<Frame<T>>,
}

impl<T: Scalar> Pyramid<T> {
    pub fn levels(&self) -> &[Frame<T>] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Frame<T> {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &Frame<T> {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// 2×2 box filter followed by 2× decimation; odd trailing rows/cols are dropped.
pub fn downsample2<T: Scalar>(frame: &Frame<T>) -> Frame<T> {
    let (h, w, c) = frame.dims();
    let quarter = T::lit(0.25);
    Frame::from_fn(h / 2, w / 2, c, |y, x, ch| {
        let (y0, x0) = (2 * y, 2 * x);
        (frame.get(y0, x0, ch)
            + frame.get(y0, x0 + 1, ch)
            + frame.get(y0 + 1, x0, ch)
            + frame.get(y0 + 1, x0 + 1, ch))
            * quarter
    })
}

pub fn build_pyramid<T: Scalar>(frame: &Frame<T>, levels: usize) -> Result<Pyramid<T>> {
    if levels == 0 {
        return invalid("pyramid needs at least one level");
    }
    let need = MIN_LEVEL_SIDE << (levels - 1);
    if frame.height() < need || frame.width() < need {
        return invalid(format!(
            "{levels} pyramid levels need at least {need}x{need}, got {}x{}",
            frame.height(),
            frame.width()
        ));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(frame.clone());
    for l in 1..levels {
        let next = downsample2(&out[l - 1]);
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_frame_stays_constant() {
        let f = Frame::<f64>::filled(32, 32, 3, 0.5);
        let p = build_pyramid(&f, 3).unwrap();
        assert_eq!(p.len(), 3);
        for lvl in p.levels() {
            assert!(lvl.data().iter().all(|&v| v == 0.5));
        }
        assert_eq!(p.level(2).dims(), (8, 8, 3));
    }

    #[test]
    fn too_many_levels_is_rejected() {
        let f = Frame::<f64>::zeros(16, 16, 1);
        assert!(build_pyramid(&f, 3).is_err());
        assert!(build_pyramid(&f, 2).is_ok());
        assert!(build_pyramid(&f, 0).is_err());
    }

    #[test]
    fn level_one_is_block_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Frame::<f64>::from_fn(32, 32, 1, |_, _, _| rng.gen());
        let p = build_pyramid(&f, 2).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let mut s = 0.0;
                for a in 2 * i..2 * i + 2 {
                    for b in 2 * j..2 * j + 2 {
                        s += f.get(a, b, 0);
                    }
                }
                assert!((p.level(1).get(i, j, 0) - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn odd_sizes_round_down() {
        let f = Frame::<f32>::zeros(35, 33, 1);
        let p = build_pyramid(&f, 3).unwrap();
        assert_eq!(p.level(1).dims(), (17, 16, 1));
        assert_eq!(p.level(2).dims(), (8, 8, 1));
    }
}
