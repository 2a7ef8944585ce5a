//! Warp operators against direct enumerations written from their definitions.

use adawarp::image::Frame;
use adawarp::motion::{FieldBundle, Flow};
use adawarp::warp::{ada_msa_warp_query, dfw_forward_warp, AttentionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame<f64> {
    Frame::from_fn(h, w, c, |_, _, _| rng.gen())
}

/// Clamp-to-edge bilinear interpolation.
fn bilinear(f: &Frame<f64>, x: f64, y: f64) -> Vec<f64> {
    let (h, w, c) = f.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..c)
        .map(|ch| {
            (1.0 - fy) * ((1.0 - fx) * f.get(y0, x0, ch) + fx * f.get(y0, x1, ch))
                + fy * ((1.0 - fx) * f.get(y1, x0, ch) + fx * f.get(y1, x1, ch))
        })
        .collect()
}

fn apply(mat: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| mat[r * cols + c] * x[c]).sum())
        .collect()
}

struct Reference {
    out: Vec<f64>,
    /// `[y][x][head][field]`
    attn: Vec<f64>,
}

fn ada_msa_loops(
    query: &Frame<f64>,
    frame: &Frame<f64>,
    bundle: &FieldBundle<f64>,
    p: &AttentionParams<f64>,
) -> Reference {
    let (h, w, c) = frame.dims();
    let (m, d, heads) = (bundle.m(), p.dim(), p.heads());
    let dh = d / heads;
    let mut out = Vec::new();
    let mut attn = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let q = apply(&p.wq, d, c, query.pixel(y, x));
            let mut keys = Vec::new();
            let mut values = Vec::new();
            for i in 0..m {
                let u = bundle.raw_field(i).get(y, x);
                let wt = bundle.weights[i * h * w + y * w + x];
                let n = bilinear(frame, x as f64 + wt * u.0, y as f64 + wt * u.1);
                keys.push(apply(&p.wk, d, c, &n));
                values.push(apply(&p.wv, d, c, &n));
            }
            let mut concat = vec![0.0; d];
            for hd in 0..heads {
                let range = hd * dh..(hd + 1) * dh;
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|k| range.clone().map(|j| q[j] * k[j]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let top = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = e.iter().sum();
                for i in 0..m {
                    let a = e[i] / z;
                    attn.push(a);
                    for j in range.clone() {
                        concat[j] += a * values[i][j];
                    }
                }
            }
            out.extend(apply(&p.wo, c, d, &concat));
        }
    }
    Reference { out, attn }
}

#[test]
fn ada_msa_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let c = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=4);
        let heads = rng.gen_range(1..=3);
        let d = heads * rng.gen_range(1..=3);
        let frame = random_frame(&mut rng, h, w, c);
        let query = if trial % 2 == 0 {
            frame.clone()
        } else {
            random_frame(&mut rng, h, w, c)
        };
        let fields = (0..m * 2 * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let weights = (0..m * h * w).map(|_| rng.gen_range(0.0..1.5)).collect();
        let bundle = FieldBundle::from_parts(m, h, w, fields, weights).unwrap();
        let params = AttentionParams::random(d, heads, c, 1.5, trial).unwrap();

        let got = ada_msa_warp_query(&query, &frame, &bundle, &params).unwrap();
        let want = ada_msa_loops(&query, &frame, &bundle, &params);
        for (a, b) in got.frame.data().iter().zip(&want.out) {
            worst = worst.max((a - b).abs());
        }
        let maps = got.attention.unwrap();
        let mut k = 0;
        for y in 0..h {
            for x in 0..w {
                for hd in 0..heads {
                    for i in 0..m {
                        worst = worst.max((maps.get(hd, i, y, x) - want.attn[k]).abs());
                        k += 1;
                    }
                }
            }
        }
    }
    assert!(worst < TOL, "max abs error {worst:e}");
}

#[test]
fn ada_msa_identity_single_field_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_frame(&mut rng, 4, 3, 3);
    let b = FieldBundle::zeros(1, 4, 3);
    let out = ada_msa_warp_query(&f, &f, &b, &AttentionParams::identity(3, 1)).unwrap();
    assert_eq!(out.frame, f);
}

/// Every source pixel contributes `max(0, 1-|dx|)·max(0, 1-|dy|)` to every
/// target pixel.
fn dfw_scatter(frame: &Frame<f64>, flow: &Flow<f64>) -> (Vec<f64>, Vec<f64>) {
    let (h, w, c) = frame.dims();
    let mut out = vec![0.0; h * w * c];
    let mut validity = vec![0.0; h * w];
    for ty in 0..h {
        for tx in 0..w {
            let mut wsum = 0.0;
            let mut acc = vec![0.0; c];
            for sy in 0..h {
                for sx in 0..w {
                    let (u, v) = flow.get(sy, sx);
                    let kx = (1.0 - (sx as f64 + u - tx as f64).abs()).max(0.0);
                    let ky = (1.0 - (sy as f64 + v - ty as f64).abs()).max(0.0);
                    let k = kx * ky;
                    wsum += k;
                    for ch in 0..c {
                        acc[ch] += k * frame.get(sy, sx, ch);
                    }
                }
            }
            let p = ty * w + tx;
            validity[p] = wsum.min(1.0);
            if wsum > 1e-6 {
                for ch in 0..c {
                    out[p * c + ch] = acc[ch] / wsum;
                }
            }
        }
    }
    (out, validity)
}

#[test]
fn dfw_matches_brute_force_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let c = rng.gen_range(1..=3);
        let frame = random_frame(&mut rng, h, w, c);
        let flow = Flow::from_fn(h, w, |_, _| (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)));
        let got = dfw_forward_warp(&frame, &flow).unwrap();
        let (out, validity) = dfw_scatter(&frame, &flow);
        for (a, b) in got.frame.data().iter().zip(&out) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in got.validity.iter().zip(&validity) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < TOL, "max abs error {worst:e}");
}

#[test]
fn dfw_zero_flow_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_frame(&mut rng, 3, 4, 2);
    let out = dfw_forward_warp(&f, &Flow::zeros(3, 4)).unwrap();
    assert_eq!(out.frame, f);
    assert!(out.validity.iter().all(|&v| v == 1.0));
}
