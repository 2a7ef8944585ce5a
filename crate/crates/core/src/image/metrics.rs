//! PSNR and SSIM with peak value 1.0.

use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::Scalar;

/// Returned by [`psnr`] when the frames are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filter of a single plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows, computed per
/// channel and averaged across channels.
pub fn ssim<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, c) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = (0..h * w)
            .map(|i| a.data()[i * c + ch].to_f64_lossy())
            .collect();
        let pb: Vec<f64> = (0..h * w)
            .map(|i| b.data()[i * c + ch].to_f64_lossy())
            .collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let (mu_a, oh, ow) = filter_valid(&pa, h, w, &k);
        let (mu_b, _, _) = filter_valid(&pb, h, w, &k);
        let (e_aa, _, _) = filter_valid(&paa, h, w, &k);
        let (e_bb, _, _) = filter_valid(&pbb, h, w, &k);
        let (e_ab, _, _) = filter_valid(&pab, h, w, &k);
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}
