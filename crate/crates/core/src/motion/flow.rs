use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::Scalar;

/// Dense 2D displacement field in pixels; `u` horizontal, `v` vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow<T> {
    height: usize,
    width: usize,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Flow<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, T::zero(), T::zero())
    }

    pub fn constant(height: usize, width: usize, u: T, v: T) -> Self {
        Self {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
        }
    }

    pub fn new(height: usize, width: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return invalid(format!(
                "flow planes of length {}/{} do not match {height}x{width}",
                u.len(),
                v.len()
            ));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return invalid("flow contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            u,
            v,
        })
    }

    /// Builds a field from `f(row, col) -> (u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self {
            height,
            width,
            u,
            v,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn matches<U: Scalar>(&self, frame: &Frame<U>) -> bool {
        self.height == frame.height() && self.width == frame.width()
    }

    pub(crate) fn ensure_matches<U: Scalar>(&self, frame: &Frame<U>, what: &str) -> Result<()> {
        if self.matches(frame) {
            Ok(())
        } else {
            invalid(format!(
                "{what}: field {}x{} vs frame {}x{}",
                self.height,
                self.width,
                frame.height(),
                frame.width()
            ))
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|&a| a * k).collect(),
            v: self.v.iter().map(|&a| a * k).collect(),
        }
    }

    /// Interleaved two-channel frame `(u, v)`.
    pub fn to_frame(&self) -> Frame<T> {
        Frame::from_fn(self.height, self.width, 2, |y, x, c| {
            let i = y * self.width + x;
            if c == 0 {
                self.u[i]
            } else {
                self.v[i]
            }
        })
    }

    pub fn from_frame(frame: &Frame<T>) -> Result<Self> {
        if frame.channels() != 2 {
            return invalid(format!(
                "flow frames have 2 channels, got {}",
                frame.channels()
            ));
        }
        let (u, v) = frame.data().chunks_exact(2).map(|p| (p[0], p[1])).unzip();
        Self::new(frame.height(), frame.width(), u, v)
    }

    /// Box-filtered 2× reduction; displacements are halved with the grid.
    pub fn downsample2(&self) -> Self {
        let (h, w) = (self.height / 2, self.width / 2);
        let eighth = T::lit(0.125);
        let avg = |p: &[T], y: usize, x: usize| {
            let (y0, x0) = (2 * y, 2 * x);
            (p[y0 * self.width + x0]
                + p[y0 * self.width + x0 + 1]
                + p[(y0 + 1) * self.width + x0]
                + p[(y0 + 1) * self.width + x0 + 1])
                * eighth
        };
        Self::from_fn(h, w, |y, x| (avg(&self.u, y, x), avg(&self.v, y, x)))
    }

    pub fn max_magnitude(&self) -> T {
        self.u
            .iter()
            .zip(&self.v)
            .fold(T::zero(), |m, (&a, &b)| m.max(a.hypot(b)))
    }
}
