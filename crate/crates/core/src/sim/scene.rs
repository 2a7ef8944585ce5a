use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Frame;
use crate::sim::texture::{procedural_texture, TextureParams};
use crate::Scalar;

/// A rectangular foreground object translating over the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Viewport position (x, y) of the layer's top-left corner at t = 0.
    pub top_left: [f64; 2],
    /// Layer extent as (height, width).
    pub size: [usize; 2],
    /// Image-space velocity (x, y) in px per frame interval.
    pub velocity: [f64; 2],
}

/// Human-readable scene description; the textures are regenerated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Image-space velocity (x, y) of the background content, px per interval.
    pub velocity: [f64; 2],
    /// Rotation rate of the background about the viewport centre, rad per interval.
    pub rotation_rate: f64,
    pub layers: Vec<LayerParams>,
    /// Closed interval of valid capture times, in frame intervals.
    pub time_span: [f64; 2],
    pub texture: TextureParams,
}

impl SceneParams {
    pub fn static_scene(seed: u64, height: usize, width: usize) -> Self {
        Self {
            seed,
            height,
            width,
            channels: 3,
            velocity: [0.0, 0.0],
            rotation_rate: 0.0,
            layers: Vec::new(),
            time_span: [-2.0, 8.0],
            texture: TextureParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layer<T> {
    pub params: LayerParams,
    pub texture: Frame<T>,
}

/// Renderable scene: parameters plus generated textures.
#[derive(Debug, Clone)]
pub struct SceneSpec<T> {
    params: SceneParams,
    texture: Frame<T>,
    /// Texture coordinate of viewport (0,0) at t = 0.
    origin: [f64; 2],
    pub(crate) layers: Vec<Layer<T>>,
}

/// Which surface is visible at a viewport point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Surface {
    Background,
    Layer(usize),
}

const SPAN_PROBES: usize = 33;

impl<T: Scalar> SceneSpec<T> {
    pub fn from_params(params: &SceneParams) -> Result<Self> {
        let SceneParams {
            height,
            width,
            channels,
            ..
        } = *params;
        if height == 0 || width == 0 {
            return invalid("scene viewport must be non-empty");
        }
        if channels != 1 && channels != 3 {
            return invalid(format!("scene channels must be 1 or 3, got {channels}"));
        }
        let [t0, t1] = params.time_span;
        if !(t0.is_finite() && t1.is_finite() && t0 <= t1) {
            return invalid(format!("bad time span {:?}", params.time_span));
        }
        let all_finite = params.velocity.iter().all(|v| v.is_finite())
            && params.rotation_rate.is_finite()
            && params
                .layers
                .iter()
                .all(|l| l.velocity.iter().chain(&l.top_left).all(|v| v.is_finite()));
        if !all_finite {
            return invalid("non-finite motion parameter");
        }
        let tmax = t0.abs().max(t1.abs());
        let speed = params.velocity[0].hypot(params.velocity[1]);
        let radius = 0.5 * ((height * height + width * width) as f64).sqrt();
        let rot = (params.rotation_rate * tmax).abs().min(std::f64::consts::PI) * radius;
        let margin = (speed * tmax + rot).ceil() as usize + 3;
        let texture = procedural_texture(
            height + 2 * margin,
            width + 2 * margin,
            channels,
            params.seed,
            &params.texture,
        );
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(i, lp)| {
                if lp.size[0] == 0 || lp.size[1] == 0 {
                    return invalid("layer size must be non-zero");
                }
                let tex = procedural_texture(
                    lp.size[0] + 1,
                    lp.size[1] + 1,
                    channels,
                    params.seed.wrapping_mul(31).wrapping_add(1000 + i as u64),
                    &TextureParams {
                        wavelength: [
                            params.texture.wavelength[0],
                            params.texture.wavelength[1] * 0.5,
                        ],
                        ..params.texture
                    },
                );
                Ok(Layer {
                    params: lp.clone(),
                    texture: tex,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Self {
            params: params.clone(),
            texture,
            origin: [margin as f64, margin as f64],
            layers,
        };
        scene.check_margins()?;
        Ok(scene)
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn texture(&self) -> &Frame<T> {
        &self.texture
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn channels(&self) -> usize {
        self.params.channels
    }

    pub fn in_span(&self, t: f64) -> bool {
        let [t0, t1] = self.params.time_span;
        t.is_finite() && t >= t0 && t <= t1
    }

    pub(crate) fn ensure_in_span(&self, t: f64) -> Result<()> {
        if self.in_span(t) {
            Ok(())
        } else {
            invalid(format!(
                "time {t} outside scene span {:?}",
                self.params.time_span
            ))
        }
    }

    fn center(&self) -> [f64; 2] {
        [
            (self.params.width - 1) as f64 / 2.0,
            (self.params.height - 1) as f64 / 2.0,
        ]
    }

    /// Texture coordinate seen at viewport point `p` at time `t`.
    #[inline]
    pub fn background_map(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.center();
        let v = self.params.velocity;
        let (dx, dy) = (p[0] - c[0] - v[0] * t, p[1] - c[1] - v[1] * t);
        let a = -self.params.rotation_rate * t;
        let (sn, cs) = a.sin_cos();
        [
            self.origin[0] + c[0] + cs * dx - sn * dy,
            self.origin[1] + c[1] + sn * dx + cs * dy,
        ]
    }

    /// Viewport position of texture point `q` at time `t` (inverse of
    /// [`background_map`](Self::background_map)).
    #[inline]
    pub fn background_inverse(&self, q: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.center();
        let v = self.params.velocity;
        let (dx, dy) = (q[0] - self.origin[0] - c[0], q[1] - self.origin[1] - c[1]);
        let a = self.params.rotation_rate * t;
        let (sn, cs) = a.sin_cos();
        [
            c[0] + v[0] * t + cs * dx - sn * dy,
            c[1] + v[1] * t + sn * dx + cs * dy,
        ]
    }

    #[inline]
    fn layer_origin(lp: &LayerParams, t: f64) -> [f64; 2] {
        [
            lp.top_left[0] + lp.velocity[0] * t,
            lp.top_left[1] + lp.velocity[1] * t,
        ]
    }

    /// Opacity of layer `i` at viewport point `p`: a one-pixel linear ramp
    /// around the rectangle boundary.
    #[inline]
    fn layer_alpha(lp: &LayerParams, p: [f64; 2], t: f64) -> f64 {
        let o = Self::layer_origin(lp, t);
        let (qx, qy) = (p[0] - o[0], p[1] - o[1]);
        let (h, w) = (lp.size[0] as f64, lp.size[1] as f64);
        let inside = qx.min(w - qx).min(qy).min(h - qy);
        (inside + 0.5).clamp(0.0, 1.0)
    }

    /// The frontmost surface with opacity ≥ ½ at `p`.
    pub(crate) fn visible_surface(&self, p: [f64; 2], t: f64) -> Surface {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if Self::layer_alpha(&layer.params, p, t) >= 0.5 {
                return Surface::Layer(i);
            }
        }
        Surface::Background
    }

    pub(crate) fn layer_velocity(&self, i: usize) -> [f64; 2] {
        self.layers[i].params.velocity
    }

    /// Renders the colour at viewport point `p`, time `t`, into `out`.
    pub(crate) fn shade(&self, p: [f64; 2], t: f64, out: &mut [T], scratch: &mut [T]) {
        let q = self.background_map(p, t);
        self.texture.sample_into(T::lit(q[0]), T::lit(q[1]), out);
        for layer in &self.layers {
            let alpha = Self::layer_alpha(&layer.params, p, t);
            if alpha <= 0.0 {
                continue;
            }
            let o = Self::layer_origin(&layer.params, t);
            layer
                .texture
                .sample_into(T::lit(p[0] - o[0]), T::lit(p[1] - o[1]), scratch);
            let a = T::lit(alpha);
            for (dst, &src) in out.iter_mut().zip(scratch.iter()) {
                *dst = a * src + (T::one() - a) * *dst;
            }
        }
    }

    fn check_margins(&self) -> Result<()> {
        let [t0, t1] = self.params.time_span;
        let (tw, th) = (
            (self.texture.width() - 1) as f64,
            (self.texture.height() - 1) as f64,
        );
        let (w, h) = ((self.params.width - 1) as f64, (self.params.height - 1) as f64);
        let corners = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]];
        for k in 0..SPAN_PROBES {
            let t = t0 + (t1 - t0) * k as f64 / (SPAN_PROBES - 1) as f64;
            for &c in &corners {
                let q = self.background_map(c, t);
                if q[0] < 0.0 || q[1] < 0.0 || q[0] > tw || q[1] > th {
                    return Err(Error::UnsupportedScene(format!(
                        "texture margin too small at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}
