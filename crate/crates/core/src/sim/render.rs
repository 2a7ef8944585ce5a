use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Frame;
use crate::motion::FieldBundle;
use crate::sim::scene::{SceneSpec, Surface};
use crate::sim::TimeOffsetMap;
use crate::Scalar;

const SOLVE_ITERS: usize = 200;
const SOLVE_TOL: f64 = 1e-12;

/// RS frame, GS frame at the middle-scanline instant, and the exact GS→RS
/// displacement.
#[derive(Debug, Clone)]
pub struct FramePair<T> {
    pub rs: Frame<T>,
    pub gs: Frame<T>,
    pub gt_bundle: FieldBundle<T>,
    pub t_mid: f64,
}

fn render_rows<T: Scalar>(scene: &SceneSpec<T>, row_time: impl Fn(usize) -> f64 + Sync) -> Frame<T> {
    let (h, w, c) = (scene.height(), scene.width(), scene.channels());
    let mut data = vec![T::zero(); h * w * c];
    data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        let t = row_time(y);
        let mut scratch = vec![T::zero(); c];
        for x in 0..w {
            scene.shade(
                [x as f64, y as f64],
                t,
                &mut row[x * c..(x + 1) * c],
                &mut scratch,
            );
        }
    });
    Frame::new(h, w, c, data).expect("rendered values are finite")
}

/// Instantaneous global exposure at time `t`.
pub fn render_gs<T: Scalar>(scene: &SceneSpec<T>, t: f64) -> Result<Frame<T>> {
    scene.ensure_in_span(t)?;
    Ok(render_rows(scene, |_| t))
}

/// Row `i` is exposed at `t_mid + T(i)` where `T` is the time offset map for
/// readout ratio `s`.
pub fn render_rs<T: Scalar>(scene: &SceneSpec<T>, t_mid: f64, s: f64) -> Result<Frame<T>> {
    let tmap = TimeOffsetMap::new(scene.height(), s)?;
    for &o in tmap.offsets() {
        scene.ensure_in_span(t_mid + o)?;
    }
    Ok(render_rows(scene, |y| t_mid + tmap.offset(y)))
}

/// Solves `y' = pos_y(t_mid + T(y'))` by fixed-point iteration; `pos` gives the
/// RS-frame position of the tracked surface point at time `t`.
fn solve_row(
    tmap: &TimeOffsetMap,
    t_mid: f64,
    start: [f64; 2],
    pos: impl Fn(f64) -> [f64; 2],
) -> Option<[f64; 2]> {
    let mut p = start;
    for _ in 0..SOLVE_ITERS {
        let next = pos(t_mid + tmap.offset_at(p[1]));
        let done = (next[1] - p[1]).abs() <= SOLVE_TOL * (1.0 + p[1].abs());
        p = next;
        if done {
            return Some(p);
        }
    }
    None
}

/// Exact single-field bundle `U` with `RS(x + U(x)) = GS(x)` at `t_mid` for
/// visible, in-bounds points. Weight map is all ones.
pub fn gt_displacement<T: Scalar>(
    scene: &SceneSpec<T>,
    t_mid: f64,
    s: f64,
) -> Result<FieldBundle<T>> {
    let (h, w) = (scene.height(), scene.width());
    let tmap = TimeOffsetMap::new(h, s)?;
    for &o in tmap.offsets() {
        scene.ensure_in_span(t_mid + o)?;
    }
    // the row equation is a contraction iff vertical speed × row slope < 1
    let slope = if h > 1 { s / (h - 1) as f64 } else { 0.0 };
    let p = scene.params();
    let radius = 0.5 * ((h * h + w * w) as f64).sqrt();
    let mut vy_max = p.velocity[1].abs() + p.rotation_rate.abs() * radius;
    for i in 0..scene.layers.len() {
        vy_max = vy_max.max(scene.layer_velocity(i)[1].abs());
    }
    if vy_max * slope >= 0.9 {
        return Err(Error::UnsupportedScene(format!(
            "vertical speed {vy_max:.3} px/interval with readout ratio {s} folds rows"
        )));
    }
    let n = h * w;
    let rows: Vec<Result<Vec<(T, T)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let x0 = [x as f64, y as f64];
                let found = match scene.visible_surface(x0, t_mid) {
                    Surface::Background => {
                        let q = scene.background_map(x0, t_mid);
                        solve_row(&tmap, t_mid, x0, |t| scene.background_inverse(q, t))
                    }
                    Surface::Layer(i) => {
                        let v = scene.layer_velocity(i);
                        solve_row(&tmap, t_mid, x0, |t| {
                            [x0[0] + v[0] * (t - t_mid), x0[1] + v[1] * (t - t_mid)]
                        })
                    }
                };
                let p = found.ok_or_else(|| {
                    Error::UnsupportedScene(format!("row solve diverged at ({x}, {y})"))
                })?;
                row.push((T::lit(p[0] - x0[0]), T::lit(p[1] - x0[1])));
            }
            Ok(row)
        })
        .collect();
    let mut fields = vec![T::zero(); 2 * n];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (u, v)) in row?.into_iter().enumerate() {
            fields[y * w + x] = u;
            fields[n + y * w + x] = v;
        }
    }
    FieldBundle::from_parts(1, h, w, fields, vec![T::one(); n])
}

/// RS frames at `t = 0, 1, …, n-1` with GS truth at each middle-scanline instant.
pub fn make_sequence<T: Scalar>(
    scene: &SceneSpec<T>,
    n: usize,
    s: f64,
) -> Result<Vec<FramePair<T>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sequence length must be >= 1".into()));
    }
    (0..n)
        .map(|k| {
            let t = k as f64;
            Ok(FramePair {
                rs: render_rs(scene, t, s)?,
                gs: render_gs(scene, t)?,
                gt_bundle: gt_displacement(scene, t, s)?,
                t_mid: t,
            })
        })
        .collect()
}
