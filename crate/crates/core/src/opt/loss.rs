use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Frame;
use crate::motion::FieldBundle;
use crate::Scalar;

/// Objective weights. The perceptual weight is kept for reference only; the
/// optimised objective is `L_c + lambda_tv · L_tv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub eps_charbonnier: f64,
    pub lambda_p: f64,
    pub lambda_tv: f64,
    pub note: String,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eps_charbonnier: 1e-3,
            lambda_p: 0.01,
            lambda_tv: 0.001,
            note: "perceptual term not evaluated (needs a pretrained network); lambda_p unused"
                .to_string(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.eps_charbonnier) && ok(self.lambda_p) && ok(self.lambda_tv)) {
            return invalid("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Mean of `√((a−b)² + ε²)` and its gradient with respect to `a`.
pub fn charbonnier<T: Scalar>(a: &Frame<T>, b: &Frame<T>, eps: T) -> Result<(T, Frame<T>)> {
    a.ensure_same_shape(b, "charbonnier")?;
    let n = T::from_usize_lossy(a.data().len());
    let eps2 = eps * eps;
    let mut grad = a.clone();
    let mut sum = T::zero();
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        let r = (d * d + eps2).sqrt();
        sum += r;
        *g = d / (r * n);
    }
    Ok((sum / n, grad))
}

/// Penalty applied to each forward difference by [`tv_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TvPenalty {
    /// `√(d² + ε²)`
    Charbonnier(f64),
    /// `|d|`, subgradient 0 at 0.
    Abs,
}

impl TvPenalty {
    #[inline]
    fn eval<T: Scalar>(self, d: T) -> (T, T) {
        match self {
            TvPenalty::Charbonnier(eps) => {
                let e = T::lit(eps);
                let r = (d * d + e * e).sqrt();
                (r, d / r)
            }
            TvPenalty::Abs => {
                let s = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                (d.abs(), s)
            }
        }
    }
}

/// For every raw field channel: mean penalty over horizontal neighbour pairs
/// plus mean penalty over vertical neighbour pairs; summed over channels and
/// fields. Returns the value and the gradient with respect to
/// [`FieldBundle::fields`].
pub fn tv_loss<T: Scalar>(bundle: &FieldBundle<T>, penalty: TvPenalty) -> (T, Vec<T>) {
    let (h, w) = (bundle.height(), bundle.width());
    let n = h * w;
    let mut grad = vec![T::zero(); bundle.fields.len()];
    let mut total = T::zero();
    let horiz = if w > 1 { T::one() / T::from_usize_lossy(h * (w - 1)) } else { T::zero() };
    let vert = if h > 1 { T::one() / T::from_usize_lossy((h - 1) * w) } else { T::zero() };
    for (plane, g) in bundle.fields.chunks_exact(n).zip(grad.chunks_exact_mut(n)) {
        let (mut sh, mut sv) = (T::zero(), T::zero());
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    let (r, dr) = penalty.eval(plane[p + 1] - plane[p]);
                    sh += r;
                    g[p + 1] += dr * horiz;
                    g[p] -= dr * horiz;
                }
                if y + 1 < h {
                    let (r, dr) = penalty.eval(plane[p + w] - plane[p]);
                    sv += r;
                    g[p + w] += dr * vert;
                    g[p] -= dr * vert;
                }
            }
        }
        total += sh * horiz + sv * vert;
    }
    (total, grad)
}
