use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion::Flow;
use crate::sim::TimeOffsetMap;
use crate::Scalar;

/// `M` displacement fields plus `M` weight maps. Field `i` is applied as
/// `weights[i] ⊙ fields[i]` (the weight multiplies both components).
///
/// Storage is planar: `fields[((i * 2 + ch) * H + y) * W + x]` with `ch` 0 for
/// horizontal and 1 for vertical, `weights[(i * H + y) * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBundle<T> {
    m: usize,
    height: usize,
    width: usize,
    pub fields: Vec<T>,
    pub weights: Vec<T>,
}

/// Summary statistics of the weight maps, recorded since they are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl<T: Scalar> FieldBundle<T> {
    /// Zero fields, unit weights.
    pub fn zeros(m: usize, height: usize, width: usize) -> Self {
        assert!(m >= 1, "a bundle holds at least one field");
        Self {
            m,
            height,
            width,
            fields: vec![T::zero(); m * 2 * height * width],
            weights: vec![T::one(); m * height * width],
        }
    }

    pub fn from_parts(
        m: usize,
        height: usize,
        width: usize,
        fields: Vec<T>,
        weights: Vec<T>,
    ) -> Result<Self> {
        if m == 0 {
            return invalid("a bundle holds at least one field");
        }
        let n = height * width;
        if fields.len() != m * 2 * n || weights.len() != m * n {
            return invalid(format!(
                "bundle buffers {}/{} do not match M={m}, {height}x{width}",
                fields.len(),
                weights.len()
            ));
        }
        if fields.iter().chain(&weights).any(|v| !v.is_finite()) {
            return invalid("bundle contains non-finite values");
        }
        Ok(Self {
            m,
            height,
            width,
            fields,
            weights,
        })
    }

    /// Single-field bundle with unit weights.
    pub fn from_flow(flow: &Flow<T>) -> Self {
        let mut fields = flow.u.clone();
        fields.extend_from_slice(&flow.v);
        Self {
            m: 1,
            height: flow.height(),
            width: flow.width(),
            fields,
            weights: vec![T::one(); flow.height() * flow.width()],
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
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
    pub(crate) fn plane(&self) -> usize {
        self.height * self.width
    }

    /// (u, v) of raw field `i` at pixel index `p`.
    #[inline]
    pub fn raw_at(&self, i: usize, p: usize) -> (T, T) {
        let n = self.plane();
        (self.fields[2 * i * n + p], self.fields[(2 * i + 1) * n + p])
    }

    #[inline]
    pub fn weight_at(&self, i: usize, p: usize) -> T {
        self.weights[i * self.plane() + p]
    }

    pub fn raw_field(&self, i: usize) -> Flow<T> {
        let n = self.plane();
        Flow::new(
            self.height,
            self.width,
            self.fields[2 * i * n..(2 * i + 1) * n].to_vec(),
            self.fields[(2 * i + 1) * n..(2 * i + 2) * n].to_vec(),
        )
        .expect("bundle fields are finite")
    }

    /// `weights[i] ⊙ fields[i]`.
    pub fn modulated(&self, i: usize) -> Flow<T> {
        let n = self.plane();
        let w = &self.weights[i * n..(i + 1) * n];
        let u = self.fields[2 * i * n..(2 * i + 1) * n]
            .iter()
            .zip(w)
            .map(|(&a, &b)| a * b)
            .collect();
        let v = self.fields[(2 * i + 1) * n..(2 * i + 2) * n]
            .iter()
            .zip(w)
            .map(|(&a, &b)| a * b)
            .collect();
        Flow::new(self.height, self.width, u, v).expect("bundle fields are finite")
    }

    pub fn weight_stats(&self) -> WeightStats {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for w in &self.weights {
            let w = w.to_f64_lossy();
            lo = lo.min(w);
            hi = hi.max(w);
            sum += w;
        }
        WeightStats {
            min: lo,
            max: hi,
            mean: sum / self.weights.len() as f64,
        }
    }

    /// Keeps only the first `m` fields.
    pub fn truncated(&self, m: usize) -> Self {
        assert!(m >= 1 && m <= self.m);
        let n = self.plane();
        Self {
            m,
            height: self.height,
            width: self.width,
            fields: self.fields[..2 * m * n].to_vec(),
            weights: self.weights[..m * n].to_vec(),
        }
    }

    /// Planar dump: all field planes followed by all weight planes.
    pub fn to_planes(&self) -> Vec<T> {
        let mut out = self.fields.clone();
        out.extend_from_slice(&self.weights);
        out
    }

    pub fn from_planes(m: usize, height: usize, width: usize, planes: Vec<T>) -> Result<Self> {
        let split = m * 2 * height * width;
        if planes.len() != 3 * m * height * width {
            return invalid(format!(
                "{} values do not form a {m}-field {height}x{width} bundle",
                planes.len()
            ));
        }
        let mut fields = planes;
        let weights = fields.split_off(split);
        Self::from_parts(m, height, width, fields, weights)
    }

    pub fn cast<U: Scalar>(&self) -> FieldBundle<U> {
        let cv = |v: &Vec<T>| -> Vec<U> { v.iter().map(|x| U::lit(x.to_f64_lossy())).collect() };
        FieldBundle {
            m: self.m,
            height: self.height,
            width: self.width,
            fields: cv(&self.fields),
            weights: cv(&self.weights),
        }
    }
}

/// Multiplies a velocity field by the per-row time offset: `U(x) = V(x)·T(row)`.
pub fn displacement_from_velocity<T: Scalar>(flow: &Flow<T>, tmap: &TimeOffsetMap) -> Result<Flow<T>> {
    if tmap.height() != flow.height() {
        return invalid(format!(
            "time map has {} rows, flow has {}",
            tmap.height(),
            flow.height()
        ));
    }
    let w = flow.width();
    Ok(Flow::from_fn(flow.height(), w, |y, x| {
        let t = T::lit(tmap.offset(y));
        let (u, v) = flow.get(y, x);
        (u * t, v * t)
    }))
}

/// Constant per-field offsets for fields `1..m`, each of magnitude ≤ `jitter`.
/// Field 0 always gets a zero offset.
pub fn jitter_offsets(m: usize, jitter: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![[0.0, 0.0]];
    for _ in 1..m {
        let r = jitter * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        out.push([r * a.cos(), r * a.sin()]);
    }
    out
}

/// Eq.-2 style initialisation: field 0 is `flow ⊙ T`, fields `1..M` add a
/// seeded constant offset of magnitude ≤ `jitter`, weights are all one.
pub fn init_bundle<T: Scalar>(
    flow: &Flow<T>,
    tmap: &TimeOffsetMap,
    m: usize,
    jitter: f64,
    seed: u64,
) -> Result<FieldBundle<T>> {
    if m == 0 {
        return invalid("init_bundle needs M >= 1");
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return invalid(format!("jitter must be finite and >= 0, got {jitter}"));
    }
    let base = displacement_from_velocity(flow, tmap)?;
    let (h, w) = (flow.height(), flow.width());
    let offsets = jitter_offsets(m, jitter, seed);
    let mut bundle = FieldBundle::zeros(m, h, w);
    let n = h * w;
    for (i, off) in offsets.iter().enumerate() {
        let (ou, ov) = (T::lit(off[0]), T::lit(off[1]));
        for p in 0..n {
            bundle.fields[2 * i * n + p] = base.u[p] + ou;
            bundle.fields[(2 * i + 1) * n + p] = base.v[p] + ov;
        }
    }
    Ok(bundle)
}

fn upsample_plane<T: Scalar>(src: &[T], h: usize, w: usize, scale: T) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let hi_x = T::from_usize_lossy(w - 1);
    let hi_y = T::from_usize_lossy(h - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        // pixel centres: fine y maps to coarse (y + 0.5)/2 - 0.5
        let sy = (T::from_usize_lossy(y) * half - quarter).max(T::zero()).min(hi_y);
        let y0 = sy.floor().to_usize().unwrap_or(0).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - T::from_usize_lossy(y0);
        for x in 0..ow {
            let sx = (T::from_usize_lossy(x) * half - quarter).max(T::zero()).min(hi_x);
            let x0 = sx.floor().to_usize().unwrap_or(0).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - T::from_usize_lossy(x0);
            let v = (T::one() - fy) * ((T::one() - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1])
                + fy * ((T::one() - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
            out.push(v * scale);
        }
    }
    out
}

/// 2× bilinear upsampling (pixel-centre aligned, clamped). Displacements are
/// doubled, weights are not.
pub fn upsample_bundle<T: Scalar>(bundle: &FieldBundle<T>) -> FieldBundle<T> {
    let (h, w, n) = (bundle.height, bundle.width, bundle.plane());
    let two = T::lit(2.0);
    let mut fields = Vec::with_capacity(bundle.fields.len() * 4);
    for plane in bundle.fields.chunks_exact(n) {
        fields.extend(upsample_plane(plane, h, w, two));
    }
    let mut weights = Vec::with_capacity(bundle.weights.len() * 4);
    for plane in bundle.weights.chunks_exact(n) {
        weights.extend(upsample_plane(plane, h, w, T::one()));
    }
    FieldBundle {
        m: bundle.m,
        height: 2 * h,
        width: 2 * w,
        fields,
        weights,
    }
}

/// Resizes to exactly `height × width` by upsampling then edge-padding or
/// cropping; used when a pyramid level had an odd size.
pub fn upsample_bundle_to<T: Scalar>(
    bundle: &FieldBundle<T>,
    height: usize,
    width: usize,
) -> FieldBundle<T> {
    let up = upsample_bundle(bundle);
    if up.height == height && up.width == width {
        return up;
    }
    let resize = |src: &[T], planes: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(planes * height * width);
        for p in 0..planes {
            let s = &src[p * up.plane()..(p + 1) * up.plane()];
            for y in 0..height {
                let yy = y.min(up.height - 1);
                for x in 0..width {
                    out.push(s[yy * up.width + x.min(up.width - 1)]);
                }
            }
        }
        out
    };
    FieldBundle {
        m: up.m,
        height,
        width,
        fields: resize(&up.fields, 2 * up.m),
        weights: resize(&up.weights, up.m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eq2_arithmetic_at_a_row() {
        let flow = Flow::<f64>::constant(11, 4, 3.0, 0.0);
        let tmap = TimeOffsetMap::new(11, 0.4).unwrap();
        // row 10: (10 - 5) * 0.4 / 10 = 0.2
        assert!((tmap.offset(10) - 0.2).abs() < 1e-15);
        let b = init_bundle(&flow, &tmap, 1, 0.0, 0).unwrap();
        let f = b.raw_field(0);
        let (u, v) = f.get(10, 2);
        assert!((u - 0.6).abs() < 1e-12 && v == 0.0);
    }

    #[test]
    fn single_field_without_jitter_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flow = Flow::<f64>::from_fn(9, 7, |_, _| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)));
        let tmap = TimeOffsetMap::new(9, 0.8).unwrap();
        let b = init_bundle(&flow, &tmap, 1, 0.0, 42).unwrap();
        let expect = displacement_from_velocity(&flow, &tmap).unwrap();
        assert_eq!(b.raw_field(0), expect);
        assert_eq!(b.modulated(0), expect);
        assert!(b.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn zero_flow_stays_within_jitter() {
        let flow = Flow::<f64>::zeros(6, 6);
        let tmap = TimeOffsetMap::new(6, 0.8).unwrap();
        let b = init_bundle(&flow, &tmap, 9, 0.5, 3).unwrap();
        for i in 0..9 {
            let f = b.raw_field(i);
            assert!(f.max_magnitude() <= 0.5 + 1e-12);
            assert_eq!(b.modulated(i), f);
        }
        assert!(b.weights.iter().all(|&w| w == 1.0));
        // fields 1.. actually differ from field 0
        assert_ne!(b.raw_field(1), b.raw_field(0));
    }

    #[test]
    fn init_rejects_bad_arguments() {
        let flow = Flow::<f64>::zeros(6, 6);
        let tmap = TimeOffsetMap::new(6, 0.8).unwrap();
        assert!(init_bundle(&flow, &tmap, 0, 0.5, 0).is_err());
        assert!(init_bundle(&flow, &tmap, 2, -1.0, 0).is_err());
        assert!(init_bundle(&flow, &TimeOffsetMap::new(5, 0.8).unwrap(), 2, 0.5, 0).is_err());
    }

    #[test]
    fn upsample_zero_and_constant() {
        let z = FieldBundle::<f64>::zeros(3, 4, 5);
        let up = upsample_bundle(&z);
        assert_eq!((up.height(), up.width()), (8, 10));
        assert!(up.fields.iter().all(|&v| v == 0.0));
        assert!(up.weights.iter().all(|&v| v == 1.0));

        let c = FieldBundle::from_flow(&Flow::<f64>::constant(4, 4, 1.0, 0.0));
        let up = upsample_bundle(&c);
        let f = up.raw_field(0);
        assert!(f.u.iter().all(|&v| v == 2.0) && f.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_matches_interpolation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 64;
        let fields: Vec<f64> = (0..2 * 2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b = FieldBundle::from_parts(2, 8, 8, fields, weights).unwrap();
        let up = upsample_bundle(&b);
        // independent evaluation through Frame::sample at the mapped coordinate
        let plane_frame = |src: &[f64]| crate::image::Frame::new(8, 8, 1, src.to_vec()).unwrap();
        for _ in 0..50 {
            let (y, x) = (rng.gen_range(0..16), rng.gen_range(0..16));
            let (cy, cx) = ((y as f64 + 0.5) / 2.0 - 0.5, (x as f64 + 0.5) / 2.0 - 0.5);
            for plane in 0..4 {
                let f = plane_frame(&b.fields[plane * n..(plane + 1) * n]);
                let expect = 2.0 * f.sample(cx, cy).unwrap()[0];
                assert!((up.fields[plane * 256 + y * 16 + x] - expect).abs() < 1e-12);
            }
            for plane in 0..2 {
                let f = plane_frame(&b.weights[plane * n..(plane + 1) * n]);
                let expect = f.sample(cx, cy).unwrap()[0];
                assert!((up.weights[plane * 256 + y * 16 + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_to_odd_size_pads() {
        let c = FieldBundle::from_flow(&Flow::<f64>::constant(4, 4, 1.0, -1.0));
        let up = upsample_bundle_to(&c, 9, 8);
        assert_eq!((up.height(), up.width()), (9, 8));
        assert!(up.raw_field(0).u.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn planes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = FieldBundle::<f64>::from_parts(
            2,
            3,
            4,
            (0..48).map(|_| rng.gen()).collect(),
            (0..24).map(|_| rng.gen()).collect(),
        )
        .unwrap();
        assert_eq!(FieldBundle::from_planes(2, 3, 4, b.to_planes()).unwrap(), b);
    }
}
