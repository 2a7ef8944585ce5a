use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::Scalar;

/// `(2r+1)² × H × W` cost volume. Entry `(d, y, x)` is the channel-mean dot
/// product of `center(x, y)` and `neighbor(x + dx, y + dy)` (clamped), with
/// `d = (dy + r)(2r + 1) + (dx + r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume<T> {
    radius: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> CorrelationVolume<T> {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn displacements(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    /// `(displacements, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.displacements(), self.height, self.width)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn index_of(&self, dx: isize, dy: isize) -> usize {
        let r = self.radius as isize;
        ((dy + r) * (2 * r + 1) + dx + r) as usize
    }

    pub fn get(&self, dx: isize, dy: isize, y: usize, x: usize) -> T {
        let d = self.index_of(dx, dy);
        self.values[(d * self.height + y) * self.width + x]
    }

    /// Displacement with the highest correlation at `(y, x)`; first maximum
    /// in scan order wins.
    pub fn argmax(&self, y: usize, x: usize) -> (isize, isize) {
        let r = self.radius as isize;
        let mut best = (0, 0);
        let mut best_v = T::neg_infinity();
        for dy in -r..=r {
            for dx in -r..=r {
                let v = self.get(dx, dy, y, x);
                if v > best_v {
                    best_v = v;
                    best = (dx, dy);
                }
            }
        }
        best
    }
}

pub fn correlation_volume<T: Scalar>(
    center: &Frame<T>,
    neighbor: &Frame<T>,
    radius: usize,
) -> Result<CorrelationVolume<T>> {
    center.ensure_same_shape(neighbor, "correlation_volume")?;
    if radius == 0 {
        return invalid("correlation radius must be >= 1");
    }
    let (h, w, c) = center.dims();
    let side = 2 * radius + 1;
    let inv_c = T::one() / T::from_usize_lossy(c);
    let r = radius as isize;
    let mut values = vec![T::zero(); side * side * h * w];
    values
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(d, plane)| {
            let dy = (d / side) as isize - r;
            let dx = (d % side) as isize - r;
            for y in 0..h {
                let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for x in 0..w {
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let a = center.pixel(y, x);
                    let b = neighbor.pixel(ny, nx);
                    let dot: T = a.iter().zip(b).map(|(&p, &q)| p * q).sum();
                    plane[y * w + x] = dot * inv_c;
                }
            }
        });
    Ok(CorrelationVolume {
        radius,
        height: h,
        width: w,
        values,
    })
}
