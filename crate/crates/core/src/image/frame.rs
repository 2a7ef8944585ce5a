use crate::error::{invalid, Result};
use crate::Scalar;

/// Dense H×W×C image with interleaved channels, row-major.
///
/// Values are nominally in [0,1] but nothing here clamps them; clamping only
/// happens when exporting to an 8-bit format.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return invalid(format!(
                "frame dimensions must be non-zero, got {height}x{width}x{channels}"
            ));
        }
        if data.len() != height * width * channels {
            return invalid(format!(
                "frame data length {} does not match {height}x{width}x{channels}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("frame contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty frame");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    /// Builds a frame from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty frame");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers keep values finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn row(&self, y: usize) -> &[T] {
        let n = self.width * self.channels;
        &self.data[y * n..(y + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).expect("cast"))
                .collect(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || y0 + height > self.height || x0 + width > self.width {
            return invalid(format!(
                "crop {height}x{width}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            ));
        }
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| {
            self.get(y0 + y, x0 + x, c)
        }))
    }

    /// Drops a `margin`-pixel border on every side.
    pub fn interior(&self, margin: usize) -> Result<Self> {
        if 2 * margin >= self.height || 2 * margin >= self.width {
            return invalid(format!(
                "margin {margin} leaves nothing of {}x{}",
                self.height, self.width
            ));
        }
        self.crop(
            margin,
            margin,
            self.height - 2 * margin,
            self.width - 2 * margin,
        )
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean over a set of equally shaped frames.
    pub fn mean_of(frames: &[&Self]) -> Result<Self> {
        let first = match frames.first() {
            Some(f) => *f,
            None => return invalid("mean of zero frames"),
        };
        for f in &frames[1..] {
            first.ensure_same_shape(f, "mean_of")?;
        }
        let n = T::from_usize_lossy(frames.len());
        let mut out = first.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            let mut acc = T::zero();
            for f in frames {
                acc += f.data[i];
            }
            *v = acc / n;
        }
        Ok(out)
    }

    pub fn sample(&self, x: T, y: T) -> Result<Vec<T>> {
        if !x.is_finite() || !y.is_finite() {
            return invalid("bilinear sample at non-finite coordinate");
        }
        let mut out = vec![T::zero(); self.channels];
        self.sample_into(x, y, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`sample`](Self::sample) writing into `out`.
    #[inline]
    pub fn sample_into(&self, x: T, y: T, out: &mut [T]) {
        let taps = Taps::new(self.width, self.height, x, y);
        taps.gather(self, out);
    }
}

/// The four bilinear support pixels of a point and the partial derivatives of
/// their weights. Coordinates are clamped to the frame; along a clamped axis
/// the weight derivatives are zero.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps<T> {
    pub idx: [usize; 4],
    pub w: [T; 4],
    pub dwdx: [T; 4],
    pub dwdy: [T; 4],
}

impl<T: Scalar> Taps<T> {
    #[inline]
    pub fn new(width: usize, height: usize, x: T, y: T) -> Self {
        let (x0, x1, fx, inside_x) = axis(width, x);
        let (y0, y1, fy, inside_y) = axis(height, y);
        let one = T::one();
        let gx = if inside_x { one } else { T::zero() };
        let gy = if inside_y { one } else { T::zero() };
        Self {
            idx: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            w: [
                (one - fx) * (one - fy),
                fx * (one - fy),
                (one - fx) * fy,
                fx * fy,
            ],
            dwdx: [-(one - fy) * gx, (one - fy) * gx, -fy * gx, fy * gx],
            dwdy: [-(one - fx) * gy, -fx * gy, (one - fx) * gy, fx * gy],
        }
    }

    #[inline]
    pub fn gather(&self, frame: &Frame<T>, out: &mut [T]) {
        let c = frame.channels;
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            let mut acc = T::zero();
            for k in 0..4 {
                acc += self.w[k] * frame.data[self.idx[k] * c + ch];
            }
            *o = acc;
        }
    }

    /// Spatial gradient of the sampled value per channel: (d/dx, d/dy).
    #[inline]
    pub fn gather_grad(&self, frame: &Frame<T>, dx: &mut [T], dy: &mut [T]) {
        let c = frame.channels;
        for ch in 0..c {
            let mut ax = T::zero();
            let mut ay = T::zero();
            for k in 0..4 {
                let p = frame.data[self.idx[k] * c + ch];
                ax += self.dwdx[k] * p;
                ay += self.dwdy[k] * p;
            }
            dx[ch] = ax;
            dy[ch] = ay;
        }
    }
}

#[inline]
fn axis<T: Scalar>(len: usize, v: T) -> (usize, usize, T, bool) {
    let hi = T::from_usize_lossy(len - 1);
    let inside = v > T::zero() && v < hi;
    let vc = v.max(T::zero()).min(hi);
    let mut i0 = vc.floor().to_usize().unwrap_or(0);
    if i0 >= len - 1 {
        i0 = len - 1;
    }
    let f = vc - T::from_usize_lossy(i0);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, f, inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame<f64> {
        Frame::from_fn(h, w, c, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(Frame::<f64>::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Frame::<f64>::new(1, 2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(Frame::<f64>::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 5, 7, 3);
        for y in 0..5 {
            for x in 0..7 {
                let s = f.sample(x as f64, y as f64).unwrap();
                assert_eq!(s.as_slice(), f.pixel(y, x));
            }
        }
    }

    #[test]
    fn symmetric_average_of_two_by_two() {
        let f = Frame::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.sample(0.5, 0.5).unwrap(), vec![1.5]);
    }

    #[test]
    fn matches_four_tap_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_frame(&mut rng, 8, 8, 2);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(0.0..7.0);
            let y: f64 = rng.gen_range(0.0..7.0);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (ax, ay) = (x - x0 as f64, y - y0 as f64);
            let s = f.sample(x, y).unwrap();
            for c in 0..2 {
                let p = |yy: usize, xx: usize| f.get(yy, xx, c);
                let expect = (1.0 - ax) * (1.0 - ay) * p(y0, x0)
                    + ax * (1.0 - ay) * p(y0, x0 + 1)
                    + (1.0 - ax) * ay * p(y0 + 1, x0)
                    + ax * ay * p(y0 + 1, x0 + 1);
                assert!((s[c] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn clamps_outside_and_rejects_non_finite() {
        let f = Frame::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.sample(-5.0, -5.0).unwrap(), vec![0.0]);
        assert_eq!(f.sample(9.0, 9.0).unwrap(), vec![3.0]);
        assert_eq!(f.sample(9.0, -1.0).unwrap(), vec![1.0]);
        assert!(f.sample(f64::NAN, 0.0).is_err());
        assert!(f.sample(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn tap_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_frame(&mut rng, 6, 6, 1);
        let (x, y) = (2.3, 3.7);
        let t = Taps::new(6, 6, x, y);
        let (mut dx, mut dy) = ([0.0], [0.0]);
        t.gather_grad(&f, &mut dx, &mut dy);
        let h = 1e-6;
        let fx = (f.sample(x + h, y).unwrap()[0] - f.sample(x - h, y).unwrap()[0]) / (2.0 * h);
        let fy = (f.sample(x, y + h).unwrap()[0] - f.sample(x, y - h).unwrap()[0]) / (2.0 * h);
        assert!((dx[0] - fx).abs() < 1e-8);
        assert!((dy[0] - fy).abs() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn sample_within_support_range(seed in 0u64..1000, x in -2.0f64..9.0, y in -2.0f64..9.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng, 8, 8, 1);
            let v = f.sample(x, y).unwrap()[0];
            let xc = x.clamp(0.0, 7.0);
            let yc = y.clamp(0.0, 7.0);
            let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(7), (y0 + 1).min(7));
            let support = [f.get(y0, x0, 0), f.get(y0, x1, 0), f.get(y1, x0, 0), f.get(y1, x1, 0)];
            let lo = support.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn sample_is_continuous(seed in 0u64..1000, x in 0.0f64..7.0, y in 0.0f64..7.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng, 8, 8, 1);
            let a = f.sample(x, y).unwrap()[0];
            let b = f.sample(x + 1e-9, y - 1e-9).unwrap()[0];
            proptest::prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
