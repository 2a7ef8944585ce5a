use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CorrectorConfig, Mode, Warper};
use crate::error::{invalid, Result};
use crate::image::{build_pyramid, psnr, ssim, Frame};
use crate::motion::{block_match_flow, init_bundle, upsample_bundle_to, FieldBundle, Flow};
use crate::opt::{charbonnier, tv_loss, LossRecord, OptimizerState, TvPenalty};
use crate::sim::TimeOffsetMap;
use crate::warp::{
    ada_msa_grad_query, ada_msa_warp_query, backward_warp, backward_warp_grad, dfw_forward_warp,
    dfw_grad, AttentionParams, WarpOutput, DFW_EPS,
};
use crate::Scalar;

/// Pixels excluded on every side for the interior metrics.
pub const INTERIOR_MARGIN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult<T> {
    pub gs_estimate: Frame<T>,
    /// One full-resolution bundle per input frame, in input order. Oracle mode
    /// holds the supplied bundle only; fusion-only holds none.
    pub bundles: Vec<FieldBundle<T>>,
    /// Time of each input frame relative to the centre frame.
    pub frame_offsets: Vec<f64>,
    pub attention: Option<AttentionParams<T>>,
    pub loss_trace: Vec<LossRecord>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_interior: f64,
    pub ssim_interior: f64,
}

pub fn evaluate_frame<T: Scalar>(estimate: &Frame<T>, truth: &Frame<T>) -> Result<Metrics> {
    estimate.ensure_same_shape(truth, "evaluate")?;
    let (ei, ti) = (estimate.interior(INTERIOR_MARGIN)?, truth.interior(INTERIOR_MARGIN)?);
    Ok(Metrics {
        psnr: psnr(estimate, truth)?,
        ssim: ssim(estimate, truth)?,
        psnr_interior: psnr(&ei, &ti)?,
        ssim_interior: ssim(&ei, &ti)?,
    })
}

pub fn evaluate<T: Scalar>(result: &CorrectionResult<T>, gs_truth: &Frame<T>) -> Result<Metrics> {
    evaluate_frame(&result.gs_estimate, gs_truth)
}

/// Corrects the centre of `frames` (laid out as in
/// [`CorrectorConfig::frame_layout`]) to a GS frame at its middle-scanline time.
pub fn correct<T: Scalar>(
    frames: &[Frame<T>],
    config: &CorrectorConfig,
    gs_truth: Option<&Frame<T>>,
    gt_bundle: Option<&FieldBundle<T>>,
) -> Result<CorrectionResult<T>> {
    let start = Instant::now();
    config.validate()?;
    if frames.len() != config.frames {
        return invalid(format!(
            "config expects {} frames, got {}",
            config.frames,
            frames.len()
        ));
    }
    for f in &frames[1..] {
        frames[0].ensure_same_shape(f, "input frames")?;
    }
    if let Some(t) = gs_truth {
        frames[0].ensure_same_shape(t, "gs truth")?;
    }
    let (center, offsets) = config.frame_layout();
    match config.mode {
        Mode::Fit if gs_truth.is_none() => return invalid("fit mode needs the GS truth"),
        Mode::Oracle if gt_bundle.is_none() => return invalid("oracle mode needs the true bundle"),
        Mode::SelfSupervised if frames.len() < 2 => {
            return invalid("self mode needs at least 2 frames")
        }
        _ => {}
    }
    let mut result = if config.warper == Warper::FusionOnly {
        CorrectionResult {
            gs_estimate: Frame::mean_of(&frames.iter().collect::<Vec<_>>())?,
            bundles: Vec::new(),
            frame_offsets: offsets,
            attention: None,
            loss_trace: Vec::new(),
            wall_time: Duration::ZERO,
        }
    } else if config.mode == Mode::Oracle {
        oracle(&frames[center], config, gt_bundle.expect("checked above"), offsets)?
    } else {
        optimise(frames, config, gs_truth, center, offsets)?
    };
    result.wall_time = start.elapsed();
    Ok(result)
}

fn oracle<T: Scalar>(
    center: &Frame<T>,
    config: &CorrectorConfig,
    gt: &FieldBundle<T>,
    offsets: Vec<f64>,
) -> Result<CorrectionResult<T>> {
    if gt.height() != center.height() || gt.width() != center.width() {
        return invalid("true bundle does not match the frame size");
    }
    let mut attention = None;
    let out = match config.warper {
        Warper::Backward => plain(backward_warp(center, &gt.modulated(0))?),
        // The true field pulls GS pixels from the RS frame; pushing RS pixels
        // uses its negation.
        Warper::Dfw => dfw_forward_warp(center, &gt.modulated(0).scaled(-T::one()))?,
        Warper::Awm => {
            let p = AttentionParams::identity(center.channels(), config.heads);
            let out = ada_msa_warp_query(center, center, gt, &p)?;
            attention = Some(p);
            out
        }
        Warper::FusionOnly => unreachable!("handled by the caller"),
    };
    let (gs_estimate, _) = fuse(&[out], center);
    Ok(CorrectionResult {
        gs_estimate,
        bundles: vec![gt.clone()],
        frame_offsets: offsets,
        attention,
        loss_trace: Vec::new(),
        wall_time: Duration::ZERO,
    })
}

fn plain<T: Scalar>(frame: Frame<T>) -> WarpOutput<T> {
    let n = frame.height() * frame.width();
    WarpOutput {
        frame,
        validity: vec![T::one(); n],
        attention: None,
    }
}

/// Validity-weighted mean of the warped frames; pixels no frame covers take
/// the fallback value. Returns the estimate and the per-pixel validity sum.
fn fuse<T: Scalar>(outs: &[WarpOutput<T>], fallback: &Frame<T>) -> (Frame<T>, Vec<T>) {
    let (h, w, c) = fallback.dims();
    let eps = T::lit(DFW_EPS);
    let mut total = vec![T::zero(); h * w];
    let mut acc = vec![T::zero(); h * w * c];
    for o in outs {
        for p in 0..h * w {
            let v = o.validity[p];
            total[p] += v;
            for ch in 0..c {
                acc[p * c + ch] += v * o.frame.data()[p * c + ch];
            }
        }
    }
    for p in 0..h * w {
        for ch in 0..c {
            let k = p * c + ch;
            acc[k] = if total[p] > eps {
                acc[k] / total[p]
            } else {
                fallback.data()[k]
            };
        }
    }
    (Frame::new(h, w, c, acc).expect("shape preserved"), total)
}

struct Vars<T> {
    bundles: Vec<FieldBundle<T>>,
    attention: Option<AttentionParams<T>>,
}

struct Grads<T> {
    fields: Vec<Vec<T>>,
    weights: Vec<Vec<T>>,
    attention: Option<[Vec<T>; 4]>,
}

struct Evaluation<T> {
    l_c: f64,
    l_tv: f64,
    grads: Grads<T>,
}

/// One pyramid level of the problem.
struct Level<'a, T> {
    config: &'a CorrectorConfig,
    frames: Vec<Frame<T>>,
    target: Option<Frame<T>>,
    center: usize,
}

impl<T: Scalar> Level<'_, T> {
    fn warp(&self, k: usize, vars: &Vars<T>) -> Result<WarpOutput<T>> {
        let (frame, bundle) = (&self.frames[k], &vars.bundles[k]);
        match self.config.warper {
            Warper::Awm => ada_msa_warp_query(
                &self.frames[self.center],
                frame,
                bundle,
                vars.attention.as_ref().expect("awm carries attention parameters"),
            ),
            Warper::Backward => Ok(plain(backward_warp(frame, &bundle.modulated(0))?)),
            Warper::Dfw => dfw_forward_warp(frame, &bundle.modulated(0)),
            Warper::FusionOnly => unreachable!("fusion-only is never optimised"),
        }
    }

    fn warp_all(&self, vars: &Vars<T>) -> Result<Vec<WarpOutput<T>>> {
        (0..self.frames.len())
            .map(|k| {
                let mut out = self.warp(k, vars)?;
                if self.config.warper != Warper::Dfw {
                    out.validity = coverage(&vars.bundles[k]);
                }
                Ok(out)
            })
            .collect()
    }

    /// Gradients of `Σ up_frame ⊙ out + Σ up_validity ⊙ validity` for frame `k`.
    fn warp_grad(
        &self,
        k: usize,
        vars: &Vars<T>,
        up_frame: &Frame<T>,
        up_validity: &[T],
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let (frame, bundle) = (&self.frames[k], &vars.bundles[k]);
        let single = match self.config.warper {
            Warper::Awm => {
                let g = ada_msa_grad_query(
                    &self.frames[self.center],
                    frame,
                    bundle,
                    vars.attention.as_ref().expect("awm carries attention parameters"),
                    up_frame,
                )?;
                grads.fields[k] = g.fields;
                grads.weights[k] = g.weights;
                let acc = grads.attention.as_mut().expect("awm carries attention gradients");
                for (dst, src) in acc.iter_mut().zip([g.wq, g.wk, g.wv, g.wo]) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
                return Ok(());
            }
            Warper::Backward => backward_warp_grad(frame, &bundle.modulated(0), up_frame)?,
            Warper::Dfw => dfw_grad(frame, &bundle.modulated(0), up_frame, Some(up_validity))?,
            Warper::FusionOnly => unreachable!("fusion-only is never optimised"),
        };
        // Chain through the modulation `w ⊙ U` of field 0.
        let n = bundle.height() * bundle.width();
        let (gf, gw) = (&mut grads.fields[k], &mut grads.weights[k]);
        for p in 0..n {
            let (u, v) = bundle.raw_at(0, p);
            let wt = bundle.weight_at(0, p);
            gf[p] = wt * single.u[p];
            gf[n + p] = wt * single.v[p];
            gw[p] = u * single.u[p] + v * single.v[p];
        }
        Ok(())
    }

    fn evaluate(&self, vars: &Vars<T>) -> Result<Evaluation<T>> {
        let outs = self.warp_all(vars)?;
        let (h, w, c) = self.frames[0].dims();
        let n = h * w;
        let eps = T::lit(self.config.loss.eps_charbonnier);
        let mut up_frames = vec![Frame::zeros(h, w, c); outs.len()];
        let mut up_validity = vec![vec![T::zero(); n]; outs.len()];
        let l_c = match self.config.mode {
            Mode::Fit => {
                let target = self.target.as_ref().expect("fit mode carries a target");
                let (fused, total) = fuse(&outs, &self.frames[self.center]);
                let (l, g) = charbonnier(&fused, target, eps)?;
                let tiny = T::lit(DFW_EPS);
                for (k, o) in outs.iter().enumerate() {
                    for p in 0..n {
                        if total[p] <= tiny {
                            continue;
                        }
                        let inv = T::one() / total[p];
                        let mut dv = T::zero();
                        for ch in 0..c {
                            let i = p * c + ch;
                            let gi = g.data()[i];
                            up_frames[k].data_mut()[i] = o.validity[p] * inv * gi;
                            dv += (o.frame.data()[i] - fused.data()[i]) * inv * gi;
                        }
                        up_validity[k][p] = dv;
                    }
                }
                l
            }
            Mode::SelfSupervised => {
                let mut l = T::zero();
                for j in 0..outs.len() {
                    for k in j + 1..outs.len() {
                        let (v, g) = charbonnier(&outs[j].frame, &outs[k].frame, eps)?;
                        l += v;
                        for (i, gi) in g.data().iter().enumerate() {
                            up_frames[j].data_mut()[i] += *gi;
                            up_frames[k].data_mut()[i] -= *gi;
                        }
                    }
                }
                l
            }
            Mode::Oracle => unreachable!("oracle mode is never optimised"),
        };
        let mut grads = Grads {
            fields: vars.bundles.iter().map(|b| vec![T::zero(); b.fields.len()]).collect(),
            weights: vars.bundles.iter().map(|b| vec![T::zero(); b.weights.len()]).collect(),
            attention: vars
                .attention
                .as_ref()
                .map(|a| a.groups().map(|g| vec![T::zero(); g.len()])),
        };
        for k in 0..outs.len() {
            self.warp_grad(k, vars, &up_frames[k], &up_validity[k], &mut grads)?;
        }
        let lambda = T::lit(self.config.tv_weight(vars.bundles[0].m()));
        let penalty = TvPenalty::Charbonnier(self.config.loss.eps_charbonnier);
        let mut l_tv = T::zero();
        for (b, gf) in vars.bundles.iter().zip(grads.fields.iter_mut()) {
            let (v, g) = tv_loss(b, penalty);
            l_tv += v;
            gf.iter_mut().zip(g).for_each(|(d, s)| *d += lambda * s);
        }
        Ok(Evaluation {
            l_c: l_c.to_f64_lossy(),
            l_tv: l_tv.to_f64_lossy(),
            grads,
        })
    }
}

/// Fraction of a pixel's modulated samples that land inside the frame.
/// Samples further than half a pixel outside only see clamped border values.
fn coverage<T: Scalar>(bundle: &FieldBundle<T>) -> Vec<T> {
    let (h, w) = (bundle.height(), bundle.width());
    let half = T::lit(0.5);
    let (xmax, ymax) = (T::from_usize_lossy(w) - half, T::from_usize_lossy(h) - half);
    let inv = T::one() / T::from_usize_lossy(bundle.m());
    (0..h * w)
        .map(|p| {
            let (x, y) = (T::from_usize_lossy(p % w), T::from_usize_lossy(p / w));
            let mut inside = T::zero();
            for i in 0..bundle.m() {
                let (u, v) = bundle.raw_at(i, p);
                let wt = bundle.weight_at(i, p);
                let (sx, sy) = (x + wt * u, y + wt * v);
                if sx >= -half && sx <= xmax && sy >= -half && sy <= ymax {
                    inside += inv;
                }
            }
            inside
        })
        .collect()
}

/// Per-frame seed for the jitter offsets.
fn frame_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Scene velocity estimated by block matching around the centre frame.
fn velocity<T: Scalar>(frames: &[Frame<T>], center: usize, config: &CorrectorConfig) -> Result<Flow<T>> {
    let c = &frames[center];
    let bm = config.block_match;
    Ok(match frames.len() {
        1 => Flow::zeros(c.height(), c.width()),
        2 => block_match_flow(c, &frames[1], bm)?,
        _ => {
            let fwd = block_match_flow(c, &frames[2], bm)?;
            let bwd = block_match_flow(c, &frames[0], bm)?;
            let half = T::lit(0.5);
            Flow::from_fn(c.height(), c.width(), |y, x| {
                let ((fu, fv), (bu, bv)) = (fwd.get(y, x), bwd.get(y, x));
                (half * (fu - bu), half * (fv - bv))
            })
        }
    })
}

fn optimise<T: Scalar>(
    frames: &[Frame<T>],
    config: &CorrectorConfig,
    gs_truth: Option<&Frame<T>>,
    center: usize,
    offsets: Vec<f64>,
) -> Result<CorrectionResult<T>> {
    let levels = config.levels;
    let pyramids = frames
        .iter()
        .map(|f| build_pyramid(f, levels))
        .collect::<Result<Vec<_>>>()?;
    let target = gs_truth.map(|t| build_pyramid(t, levels)).transpose()?;
    let level = |l: usize| Level {
        config,
        frames: pyramids.iter().map(|p| p.level(l).clone()).collect(),
        target: target.as_ref().map(|p| p.level(l).clone()),
        center,
    };

    let coarsest = levels - 1;
    let mut vel = velocity(frames, center, config)?;
    for _ in 0..coarsest {
        vel = vel.downsample2();
    }
    let tmap = TimeOffsetMap::new(vel.height(), config.readout_ratio)?;
    // Pairwise agreement alone is satisfied by any common drift of all fields
    // or by projections that map every frame to the same output, so self mode
    // keeps the centre bundle and the attention parameters at their
    // initialisation.
    let anchored = config.mode == Mode::SelfSupervised;
    let m = if config.warper == Warper::Awm { config.m } else { 1 };
    let mut bundles = Vec::with_capacity(frames.len());
    for (k, &delta) in offsets.iter().enumerate() {
        // Jitter only serves to separate fields that are optimised.
        let jitter = if anchored && k == center { 0.0 } else { config.jitter };
        let mut b = init_bundle(&vel, &tmap.shifted(delta), m, jitter, frame_seed(config.seed, k))?;
        if config.warper == Warper::Dfw {
            // Forward warping pushes RS pixels towards the GS grid.
            b.fields.iter_mut().for_each(|v| *v = -*v);
        }
        bundles.push(b);
    }
    let mut vars = Vars {
        bundles,
        attention: (config.warper == Warper::Awm)
            .then(|| AttentionParams::identity(frames[0].channels(), config.heads)),
    };

    let mut trace = Vec::new();
    let mut step = 0;
    for l in (0..levels).rev() {
        let lv = level(l);
        let (h, w) = (lv.frames[0].height(), lv.frames[0].width());
        if l != coarsest {
            vars.bundles = vars
                .bundles
                .iter()
                .map(|b| upsample_bundle_to(b, h, w))
                .collect();
        }
        let iters = config.iterations_at(l);
        let mut sizes = Vec::new();
        let mut scales = Vec::new();
        for (k, b) in vars.bundles.iter().enumerate() {
            if !(anchored && k == center) {
                sizes.extend([b.fields.len(), b.weights.len()]);
                scales.extend([1.0, config.weight_lr_scale]);
            }
        }
        if let (false, Some(a)) = (anchored, &vars.attention) {
            for g in a.groups() {
                sizes.push(g.len());
                scales.push(config.attention_lr_scale);
            }
        }
        let mut opt = OptimizerState::<T>::new(config.adam, iters, &sizes, &scales)?;
        for _ in 0..iters {
            let lr = opt.current_lr();
            let ev = lv.evaluate(&vars)?;
            trace.push(LossRecord {
                step,
                level: l,
                lr,
                l_c: ev.l_c,
                l_tv: ev.l_tv,
                total: ev.l_c + config.tv_weight(m) * ev.l_tv,
            });
            step += 1;
            let Grads {
                fields,
                weights,
                attention,
            } = &ev.grads;
            let mut params: Vec<&mut [T]> = Vec::with_capacity(sizes.len());
            let mut grads: Vec<&[T]> = Vec::with_capacity(sizes.len());
            for (k, b) in vars.bundles.iter_mut().enumerate() {
                params.push(&mut b.fields);
                params.push(&mut b.weights);
                grads.push(&fields[k]);
                grads.push(&weights[k]);
            }
            if anchored {
                // The centre bundle is the fixed reference in self mode.
                let z = 2 * center;
                params.drain(z..z + 2);
                grads.drain(z..z + 2);
            }
            if let (false, Some(a), Some(g)) = (anchored, vars.attention.as_mut(), attention.as_ref()) {
                for p in a.groups_mut() {
                    params.push(p);
                }
                for gi in g {
                    grads.push(gi);
                }
            }
            opt.adam_step(&mut params, &grads)?;
        }
    }

    let finest = level(0);
    let outs = finest.warp_all(&vars)?;
    let (gs_estimate, _) = fuse(&outs, &finest.frames[center]);
    Ok(CorrectionResult {
        gs_estimate,
        bundles: vars.bundles,
        frame_offsets: offsets,
        attention: vars.attention,
        loss_trace: trace,
        wall_time: Duration::ZERO,
    })
}
