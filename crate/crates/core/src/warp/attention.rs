//! Adaptive multi-head attention warp.
//!
//! For every pixel `x` the query comes from the unwarped feature `F(x)`; keys
//! and values come from the `M` features sampled at `x + wᵢ(x)·Uᵢ(x)`. Each
//! head attends over the `M` samples with `softmax(q·k/√d_h)`, heads are
//! concatenated and projected back to `C` channels by `Wo`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::{Frame, Taps};
use crate::motion::FieldBundle;
use crate::warp::WarpOutput;
use crate::Scalar;

/// Projection matrices, row-major: `wq`, `wk`, `wv` are `d × C`, `wo` is `C × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    dim: usize,
    heads: usize,
    channels: usize,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(
        dim: usize,
        heads: usize,
        channels: usize,
        wq: Vec<T>,
        wk: Vec<T>,
        wv: Vec<T>,
        wo: Vec<T>,
    ) -> Result<Self> {
        if dim == 0 || heads == 0 || channels == 0 {
            return invalid("attention dimensions must be non-zero");
        }
        if dim % heads != 0 {
            return invalid(format!("embedding dim {dim} not divisible by {heads} heads"));
        }
        let dc = dim * channels;
        if wq.len() != dc || wk.len() != dc || wv.len() != dc || wo.len() != dc {
            return invalid(format!("projection sizes do not match d={dim}, C={channels}"));
        }
        if wq.iter().chain(&wk).chain(&wv).chain(&wo).any(|v| !v.is_finite()) {
            return invalid("attention parameters must be finite");
        }
        Ok(Self {
            dim,
            heads,
            channels,
            wq,
            wk,
            wv,
            wo,
        })
    }

    /// `d = heads · C`; every head sees an identity copy of the input channels
    /// and `Wo` averages the heads, so the operator is a pure softmax-weighted
    /// average of sampled features. With one head all matrices are identities.
    pub fn identity(channels: usize, heads: usize) -> Self {
        assert!(channels > 0 && heads > 0);
        let dim = heads * channels;
        let mut stacked = vec![T::zero(); dim * channels];
        for h in 0..heads {
            for c in 0..channels {
                stacked[(h * channels + c) * channels + c] = T::one();
            }
        }
        let share = T::one() / T::from_usize_lossy(heads);
        let mut wo = vec![T::zero(); channels * dim];
        for c in 0..channels {
            for h in 0..heads {
                wo[c * dim + h * channels + c] = share;
            }
        }
        Self {
            dim,
            heads,
            channels,
            wq: stacked.clone(),
            wk: stacked.clone(),
            wv: stacked,
            wo,
        }
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn random(dim: usize, heads: usize, channels: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::lit(rng.gen_range(-scale..=scale))).collect()
        };
        let dc = dim * channels;
        let (wq, wk, wv, wo) = (draw(dc), draw(dc), draw(dc), draw(dc));
        Self::new(dim, heads, channels, wq, wk, wv, wo)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The four matrices in `(wq, wk, wv, wo)` order.
    pub fn groups_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }

    pub fn groups(&self) -> [&Vec<T>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }
}

/// Per-head softmax weights over the `M` fields, stored `[(p·heads + h)·M + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps<T> {
    pub heads: usize,
    pub m: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> AttentionMaps<T> {
    #[inline]
    pub fn get(&self, head: usize, field: usize, y: usize, x: usize) -> T {
        let p = y * self.width + x;
        self.data[(p * self.heads + head) * self.m + field]
    }

    /// Head-averaged weight of `field` as a single-channel frame.
    pub fn field_map(&self, field: usize) -> Frame<T> {
        let inv = T::one() / T::from_usize_lossy(self.heads);
        Frame::from_fn(self.height, self.width, 1, |y, x, _| {
            (0..self.heads).map(|h| self.get(h, field, y, x)).sum::<T>() * inv
        })
    }
}

/// Gradients of a scalar loss through [`ada_msa_warp`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaMsaGrads<T> {
    /// Same layout as [`FieldBundle::fields`].
    pub fields: Vec<T>,
    /// Same layout as [`FieldBundle::weights`].
    pub weights: Vec<T>,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
}

#[inline]
fn matvec<T: Scalar>(mat: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    for r in 0..rows {
        let row = &mat[r * cols..(r + 1) * cols];
        let mut acc = T::zero();
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// `out += matᵀ · x` for a `rows × cols` matrix.
#[inline]
fn matvec_t_add<T: Scalar>(mat: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    for r in 0..rows {
        let row = &mat[r * cols..(r + 1) * cols];
        let xr = x[r];
        for c in 0..cols {
            out[c] += row[c] * xr;
        }
    }
}

/// `grad += a ⊗ b` for `a` of length `rows`, `b` of length `cols`.
#[inline]
fn outer_add<T: Scalar>(grad: &mut [T], a: &[T], b: &[T]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        let row = &mut grad[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += ar * b[c];
        }
    }
}

/// Forward intermediates of one pixel.
struct PixelState<T> {
    f: Vec<T>,
    q: Vec<T>,
    n: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    a: Vec<T>,
    o: Vec<T>,
    out: Vec<T>,
    taps: Vec<Taps<T>>,
}

impl<T: Scalar> PixelState<T> {
    fn new(m: usize, c: usize, d: usize, heads: usize) -> Self {
        let z = T::zero();
        Self {
            f: vec![z; c],
            q: vec![z; d],
            n: vec![z; m * c],
            k: vec![z; m * d],
            v: vec![z; m * d],
            a: vec![z; heads * m],
            o: vec![z; d],
            out: vec![z; c],
            taps: Vec::with_capacity(m),
        }
    }
}

struct Kernel<'a, T> {
    query: &'a Frame<T>,
    frame: &'a Frame<T>,
    bundle: &'a FieldBundle<T>,
    params: &'a AttentionParams<T>,
    scale: T,
}

impl<'a, T: Scalar> Kernel<'a, T> {
    fn forward(&self, y: usize, x: usize, s: &mut PixelState<T>) {
        let (h, w, c) = self.frame.dims();
        let m = self.bundle.m();
        let d = self.params.dim;
        let dh = self.params.head_dim();
        let p = y * w + x;
        s.f.copy_from_slice(self.query.pixel(y, x));
        matvec(&self.params.wq, d, c, &s.f, &mut s.q);
        s.taps.clear();
        let (fx, fy) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
        for i in 0..m {
            let (u, v) = self.bundle.raw_at(i, p);
            let wt = self.bundle.weight_at(i, p);
            let taps = Taps::new(w, h, fx + wt * u, fy + wt * v);
            taps.gather(self.frame, &mut s.n[i * c..(i + 1) * c]);
            s.taps.push(taps);
            matvec(&self.params.wk, d, c, &s.n[i * c..(i + 1) * c], &mut s.k[i * d..(i + 1) * d]);
            matvec(&self.params.wv, d, c, &s.n[i * c..(i + 1) * c], &mut s.v[i * d..(i + 1) * d]);
        }
        s.o.iter_mut().for_each(|o| *o = T::zero());
        for hd in 0..self.params.heads {
            let lo = hd * dh;
            let logits = &mut s.a[hd * m..(hd + 1) * m];
            let mut mx = T::neg_infinity();
            for i in 0..m {
                let mut dot = T::zero();
                for j in lo..lo + dh {
                    dot += s.q[j] * s.k[i * d + j];
                }
                logits[i] = dot * self.scale;
                mx = mx.max(logits[i]);
            }
            let mut z = T::zero();
            for l in logits.iter_mut() {
                *l = (*l - mx).exp();
                z += *l;
            }
            for l in logits.iter_mut() {
                *l /= z;
            }
            for i in 0..m {
                let ai = logits[i];
                for j in lo..lo + dh {
                    s.o[j] += ai * s.v[i * d + j];
                }
            }
        }
        matvec(&self.params.wo, c, d, &s.o, &mut s.out);
    }
}

fn check_inputs<T: Scalar>(
    query: &Frame<T>,
    frame: &Frame<T>,
    bundle: &FieldBundle<T>,
    params: &AttentionParams<T>,
) -> Result<()> {
    frame.ensure_same_shape(query, "ada_msa query")?;
    if bundle.height() != frame.height() || bundle.width() != frame.width() {
        return invalid(format!(
            "ada_msa: bundle {}x{} vs frame {}x{}",
            bundle.height(),
            bundle.width(),
            frame.height(),
            frame.width()
        ));
    }
    if params.channels != frame.channels() {
        return invalid(format!(
            "ada_msa: params expect {} channels, frame has {}",
            params.channels,
            frame.channels()
        ));
    }
    Ok(())
}

pub fn ada_msa_warp<T: Scalar>(
    frame: &Frame<T>,
    bundle: &FieldBundle<T>,
    params: &AttentionParams<T>,
) -> Result<WarpOutput<T>> {
    ada_msa_warp_query(frame, frame, bundle, params)
}

/// Ada-MSA with queries taken from `query` (typically the centre frame) and
/// keys/values sampled from `frame`.
pub fn ada_msa_warp_query<T: Scalar>(
    query: &Frame<T>,
    frame: &Frame<T>,
    bundle: &FieldBundle<T>,
    params: &AttentionParams<T>,
) -> Result<WarpOutput<T>> {
    check_inputs(query, frame, bundle, params)?;
    let (h, w, c) = frame.dims();
    let m = bundle.m();
    let heads = params.heads;
    let kernel = Kernel {
        query,
        frame,
        bundle,
        params,
        scale: T::one() / T::from_usize_lossy(params.head_dim()).sqrt(),
    };
    let mut out = vec![T::zero(); h * w * c];
    let mut attn = vec![T::zero(); h * w * heads * m];
    out.par_chunks_mut(w * c)
        .zip(attn.par_chunks_mut(w * heads * m))
        .enumerate()
        .for_each(|(y, (orow, arow))| {
            let mut s = PixelState::new(m, c, params.dim, heads);
            for x in 0..w {
                kernel.forward(y, x, &mut s);
                orow[x * c..(x + 1) * c].copy_from_slice(&s.out);
                arow[x * heads * m..(x + 1) * heads * m].copy_from_slice(&s.a);
            }
        });
    Ok(WarpOutput {
        frame: Frame::new(h, w, c, out)?,
        validity: vec![T::one(); h * w],
        attention: Some(AttentionMaps {
            heads,
            m,
            height: h,
            width: w,
            data: attn,
        }),
    })
}

struct RowGrads<T> {
    fields: Vec<(usize, T, T)>,
    weights: Vec<(usize, T)>,
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
}

/// Reverse mode of [`ada_msa_warp`] for `L = Σ upstream ⊙ output`.
pub fn ada_msa_grad<T: Scalar>(
    frame: &Frame<T>,
    bundle: &FieldBundle<T>,
    params: &AttentionParams<T>,
    upstream: &Frame<T>,
) -> Result<AdaMsaGrads<T>> {
    ada_msa_grad_query(frame, frame, bundle, params, upstream)
}

/// Reverse mode of [`ada_msa_warp_query`]; the query frame is a constant.
pub fn ada_msa_grad_query<T: Scalar>(
    query: &Frame<T>,
    frame: &Frame<T>,
    bundle: &FieldBundle<T>,
    params: &AttentionParams<T>,
    upstream: &Frame<T>,
) -> Result<AdaMsaGrads<T>> {
    check_inputs(query, frame, bundle, params)?;
    frame.ensure_same_shape(upstream, "ada_msa_grad upstream")?;
    let (h, w, c) = frame.dims();
    let m = bundle.m();
    let d = params.dim;
    let dh = params.head_dim();
    let heads = params.heads;
    let kernel = Kernel {
        query,
        frame,
        bundle,
        params,
        scale: T::one() / T::from_usize_lossy(dh).sqrt(),
    };
    let rows: Vec<RowGrads<T>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let z = T::zero();
            let mut s = PixelState::new(m, c, d, heads);
            let mut rg = RowGrads {
                fields: Vec::with_capacity(w * m),
                weights: Vec::with_capacity(w * m),
                wq: vec![z; d * c],
                wk: vec![z; d * c],
                wv: vec![z; d * c],
                wo: vec![z; c * d],
            };
            let mut go = vec![z; d];
            let mut dq = vec![z; d];
            let mut dk = vec![z; m * d];
            let mut dv = vec![z; m * d];
            let mut da = vec![z; m];
            let mut dn = vec![z; c];
            let mut sx = vec![z; c];
            let mut sy = vec![z; c];
            for x in 0..w {
                let g = upstream.pixel(y, x);
                if g.iter().all(|v| v.is_zero()) {
                    for i in 0..m {
                        rg.fields.push((i, z, z));
                        rg.weights.push((i, z));
                    }
                    continue;
                }
                kernel.forward(y, x, &mut s);
                outer_add(&mut rg.wo, g, &s.o);
                go.iter_mut().for_each(|v| *v = z);
                matvec_t_add(&params.wo, c, d, g, &mut go);
                dq.iter_mut().for_each(|v| *v = z);
                for hd in 0..heads {
                    let lo = hd * dh;
                    let a = &s.a[hd * m..(hd + 1) * m];
                    let mut mean = z;
                    for i in 0..m {
                        let mut dot = z;
                        for j in lo..lo + dh {
                            dv[i * d + j] = a[i] * go[j];
                            dot += go[j] * s.v[i * d + j];
                        }
                        da[i] = dot;
                        mean += a[i] * dot;
                    }
                    for i in 0..m {
                        let dlogit = a[i] * (da[i] - mean) * kernel.scale;
                        for j in lo..lo + dh {
                            dq[j] += dlogit * s.k[i * d + j];
                            dk[i * d + j] = dlogit * s.q[j];
                        }
                    }
                }
                outer_add(&mut rg.wq, &dq, &s.f);
                let p = y * w + x;
                for i in 0..m {
                    let ni = &s.n[i * c..(i + 1) * c];
                    let dki = &dk[i * d..(i + 1) * d];
                    let dvi = &dv[i * d..(i + 1) * d];
                    outer_add(&mut rg.wk, dki, ni);
                    outer_add(&mut rg.wv, dvi, ni);
                    dn.iter_mut().for_each(|v| *v = z);
                    matvec_t_add(&params.wk, d, c, dki, &mut dn);
                    matvec_t_add(&params.wv, d, c, dvi, &mut dn);
                    s.taps[i].gather_grad(frame, &mut sx, &mut sy);
                    let (mut gpx, mut gpy) = (z, z);
                    for ch in 0..c {
                        gpx += dn[ch] * sx[ch];
                        gpy += dn[ch] * sy[ch];
                    }
                    let (u, v) = bundle.raw_at(i, p);
                    let wt = bundle.weight_at(i, p);
                    rg.fields.push((i, wt * gpx, wt * gpy));
                    rg.weights.push((i, u * gpx + v * gpy));
                }
            }
            rg
        })
        .collect();

    let n = h * w;
    let z = T::zero();
    let mut out = AdaMsaGrads {
        fields: vec![z; m * 2 * n],
        weights: vec![z; m * n],
        wq: vec![z; d * c],
        wk: vec![z; d * c],
        wv: vec![z; d * c],
        wo: vec![z; c * d],
    };
    // row-ordered reduction: bit-reproducible regardless of thread count
    for (y, rg) in rows.into_iter().enumerate() {
        for (k, ((i, gu, gv), (_, gw))) in rg.fields.into_iter().zip(rg.weights).enumerate() {
            let p = y * w + k / m;
            out.fields[2 * i * n + p] = gu;
            out.fields[(2 * i + 1) * n + p] = gv;
            out.weights[i * n + p] = gw;
        }
        for (dst, src) in [
            (&mut out.wq, &rg.wq),
            (&mut out.wk, &rg.wk),
            (&mut out.wv, &rg.wv),
            (&mut out.wo, &rg.wo),
        ] {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Flow;

    fn rand_frame(seed: u64, h: usize, w: usize, c: usize) -> Frame<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, c, |_, _, _| rng.gen())
    }

    fn rand_bundle(seed: u64, m: usize, h: usize, w: usize) -> FieldBundle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FieldBundle::from_parts(
            m,
            h,
            w,
            (0..m * 2 * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            (0..m * h * w).map(|_| rng.gen_range(0.5..1.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_zero_field_identity_is_exact() {
        let f = rand_frame(1, 5, 6, 3);
        let p = AttentionParams::identity(3, 1);
        let out = ada_msa_warp(&f, &FieldBundle::zeros(1, 5, 6), &p).unwrap();
        assert_eq!(out.frame, f);
        // replicated-head identity is exact too
        let p2 = AttentionParams::identity(3, 2);
        let out = ada_msa_warp(&f, &FieldBundle::zeros(1, 5, 6), &p2).unwrap();
        assert_eq!(out.frame, f);
    }

    #[test]
    fn symmetric_targets_split_attention_evenly() {
        let f = rand_frame(2, 6, 6, 1);
        // both fields land on the same location through different (u, w) pairs
        let mut b = FieldBundle::<f64>::zeros(2, 6, 6);
        let n = 36;
        for p in 0..n {
            b.fields[p] = 1.0; // field 0: u = 1, weight 1
            b.fields[2 * n + p] = 2.0; // field 1: u = 2, weight 0.5
            b.weights[n + p] = 0.5;
        }
        let out = ada_msa_warp(&f, &b, &AttentionParams::identity(1, 1)).unwrap();
        let shifted = crate::warp::backward_warp(&f, &Flow::constant(6, 6, 1.0, 0.0)).unwrap();
        let attn = out.attention.unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(attn.get(0, 0, y, x), 0.5);
                assert_eq!(out.frame.get(y, x, 0), shifted.get(y, x, 0));
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let f = rand_frame(3, 7, 7, 3);
        let b = rand_bundle(4, 5, 7, 7);
        let p = AttentionParams::<f64>::random(6, 2, 3, 2.0, 5).unwrap();
        let attn = ada_msa_warp(&f, &b, &p).unwrap().attention.unwrap();
        for y in 0..7 {
            for x in 0..7 {
                for h in 0..2 {
                    let s: f64 = (0..5).map(|i| attn.get(h, i, y, x)).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_output_within_sample_range() {
        let f = rand_frame(6, 6, 6, 2);
        let b = rand_bundle(7, 4, 6, 6);
        let out = ada_msa_warp(&f, &b, &AttentionParams::identity(2, 1)).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let p = y * 6 + x;
                for ch in 0..2 {
                    let samples: Vec<f64> = (0..4)
                        .map(|i| {
                            let (u, v) = b.raw_at(i, p);
                            let wt = b.weight_at(i, p);
                            f.sample(x as f64 + wt * u, y as f64 + wt * v).unwrap()[ch]
                        })
                        .collect();
                    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = out.frame.get(y, x, ch);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_and_flat_frame() {
        let f = rand_frame(8, 4, 4, 3);
        let b = rand_bundle(9, 3, 4, 4);
        let p = AttentionParams::<f64>::random(6, 2, 3, 1.0, 10).unwrap();
        let g = ada_msa_grad(&f, &b, &p, &Frame::zeros(4, 4, 3)).unwrap();
        for group in [&g.fields, &g.weights, &g.wq, &g.wk, &g.wv, &g.wo] {
            assert!(group.iter().all(|&v| v == 0.0));
        }
        let flat = Frame::filled(4, 4, 3, 0.3);
        let up = rand_frame(11, 4, 4, 3);
        let g = ada_msa_grad(&flat, &b, &p, &up).unwrap();
        assert!(g.fields.iter().chain(&g.weights).all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_mismatches() {
        let f = rand_frame(1, 4, 4, 3);
        assert!(AttentionParams::<f64>::random(5, 2, 3, 1.0, 0).is_err());
        let p = AttentionParams::<f64>::identity(1, 1);
        assert!(ada_msa_warp(&f, &FieldBundle::zeros(1, 4, 4), &p).is_err());
        let p = AttentionParams::<f64>::identity(3, 1);
        assert!(ada_msa_warp(&f, &FieldBundle::zeros(1, 4, 5), &p).is_err());
    }
}
