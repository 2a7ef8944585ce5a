//! Central finite-difference checks of every analytic gradient.
//!
//! Relative error of a parameter group is
//! `max_k |analytic_k − numeric_k| / max(max_k |numeric_k|, 1e-10)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Frame;
use crate::motion::{FieldBundle, Flow};
use crate::opt::{charbonnier, tv_loss, TvPenalty};
use crate::warp::{
    ada_msa_grad_query, ada_msa_warp_query, backward_warp, backward_warp_grad, dfw_forward_warp, dfw_grad,
    AttentionParams,
};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Minimum distance of any sampled coordinate from an integer.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    BackwardWarp,
    DfwForwardWarp,
    AdaMsaWarp,
    Charbonnier,
    TvLoss,
}

impl Operator {
    pub const ALL: [Operator; 5] = [
        Operator::BackwardWarp,
        Operator::DfwForwardWarp,
        Operator::AdaMsaWarp,
        Operator::Charbonnier,
        Operator::TvLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::BackwardWarp => "backward_warp",
            Operator::DfwForwardWarp => "dfw_forward_warp",
            Operator::AdaMsaWarp => "ada_msa_warp",
            Operator::Charbonnier => "charbonnier",
            Operator::TvLoss => "tv_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub operator: Operator,
    pub trial: usize,
    pub group: String,
    pub size: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_error(&self, op: Operator) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.operator == op)
            .map(|e| e.rel_error)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error < REL_TOLERANCE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub trials: usize,
    /// Scales one analytic gradient by `1 + 1e-2`; negative control only.
    pub perturb: bool,
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-10);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Central differences of `loss` with respect to every entry of `params`.
pub fn numeric_grad(params: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + FD_STEP;
        let lp = loss(params);
        params[k] = orig - FD_STEP;
        let lm = loss(params);
        params[k] = orig;
        out.push((lp - lm) / (2.0 * FD_STEP));
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rand_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame<f64> {
    Frame::from_fn(h, w, c, |_, _, _| rng.gen())
}

fn off_integer(v: f64) -> bool {
    let f = v - v.floor();
    f > KINK_MARGIN && f < 1.0 - KINK_MARGIN
}

/// Displacement so that `base + weight·d` stays clear of integer kinks.
fn draw_disp(rng: &mut ChaCha8Rng, base: f64, weight: f64, range: f64) -> f64 {
    loop {
        let d = rng.gen_range(-range..range);
        if off_integer(base + weight * d) {
            return d;
        }
    }
}

fn rand_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, range: f64) -> Flow<f64> {
    Flow::from_fn(h, w, |y, x| {
        (
            draw_disp(rng, x as f64, 1.0, range),
            draw_disp(rng, y as f64, 1.0, range),
        )
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(4..=8), rng.gen_range(4..=8), rng.gen_range(1..=3))
}

fn check_backward(rng: &mut ChaCha8Rng, trial: usize, perturb: bool) -> Vec<GroupError> {
    let (h, w, c) = dims(rng);
    let f = rand_frame(rng, h, w, c);
    let field = rand_flow(rng, h, w, 2.0);
    let up = rand_frame(rng, h, w, c);
    let g = backward_warp_grad(&f, &field, &up).expect("shapes agree");
    let mut analytic = g.u.clone();
    analytic.extend_from_slice(&g.v);
    if perturb {
        analytic.iter_mut().for_each(|v| *v *= 1.0 + 1e-2);
    }
    let mut params = field.u.clone();
    params.extend_from_slice(&field.v);
    let numeric = numeric_grad(&mut params, |p| {
        let fl = Flow::new(h, w, p[..h * w].to_vec(), p[h * w..].to_vec()).unwrap();
        dot(backward_warp(&f, &fl).unwrap().data(), up.data())
    });
    vec![GroupError {
        operator: Operator::BackwardWarp,
        trial,
        group: "field".into(),
        size: params.len(),
        rel_error: rel_error(&analytic, &numeric),
    }]
}

fn check_dfw(rng: &mut ChaCha8Rng, trial: usize) -> Vec<GroupError> {
    let (h, w, c) = dims(rng);
    let f = rand_frame(rng, h, w, c);
    let field = rand_flow(rng, h, w, 1.5);
    let up = rand_frame(rng, h, w, c);
    let up_val: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = dfw_grad(&f, &field, &up, Some(&up_val)).expect("shapes agree");
    let mut analytic = g.u.clone();
    analytic.extend_from_slice(&g.v);
    let mut params = field.u.clone();
    params.extend_from_slice(&field.v);
    let numeric = numeric_grad(&mut params, |p| {
        let fl = Flow::new(h, w, p[..h * w].to_vec(), p[h * w..].to_vec()).unwrap();
        let out = dfw_forward_warp(&f, &fl).unwrap();
        dot(out.frame.data(), up.data()) + dot(&out.validity, &up_val)
    });
    vec![GroupError {
        operator: Operator::DfwForwardWarp,
        trial,
        group: "field".into(),
        size: params.len(),
        rel_error: rel_error(&analytic, &numeric),
    }]
}

fn check_ada_msa(rng: &mut ChaCha8Rng, trial: usize) -> Vec<GroupError> {
    let (h, w, c) = dims(rng);
    let m = rng.gen_range(1..=4);
    let heads = rng.gen_range(1..=2);
    let dim = heads * rng.gen_range(1..=3);
    let f = rand_frame(rng, h, w, c);
    let n = h * w;
    let mut fields = vec![0.0; m * 2 * n];
    let mut weights = vec![0.0; m * n];
    for i in 0..m {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let wt = rng.gen_range(0.5..1.5);
                weights[i * n + p] = wt;
                fields[2 * i * n + p] = draw_disp(rng, x as f64, wt, 1.5);
                fields[(2 * i + 1) * n + p] = draw_disp(rng, y as f64, wt, 1.5);
            }
        }
    }
    let bundle = FieldBundle::from_parts(m, h, w, fields, weights).unwrap();
    let params = AttentionParams::random(dim, heads, c, 1.0, rng.gen()).unwrap();
    let up = rand_frame(rng, h, w, c);
    // Odd trials draw queries from a separate frame.
    let query = if trial % 2 == 1 { rand_frame(rng, h, w, c) } else { f.clone() };
    let g = ada_msa_grad_query(&query, &f, &bundle, &params, &up).expect("shapes agree");
    let loss = |b: &FieldBundle<f64>, p: &AttentionParams<f64>| {
        dot(ada_msa_warp_query(&query, &f, b, p).unwrap().frame.data(), up.data())
    };
    let mut out = Vec::new();
    let mut push = |group: &str, analytic: &[f64], numeric: &[f64]| {
        out.push(GroupError {
            operator: Operator::AdaMsaWarp,
            trial,
            group: group.into(),
            size: numeric.len(),
            rel_error: rel_error(analytic, numeric),
        })
    };
    let mut fl = bundle.fields.clone();
    let num = numeric_grad(&mut fl, |p| {
        let mut b = bundle.clone();
        b.fields.copy_from_slice(p);
        loss(&b, &params)
    });
    push("fields", &g.fields, &num);
    let mut wt = bundle.weights.clone();
    let num = numeric_grad(&mut wt, |p| {
        let mut b = bundle.clone();
        b.weights.copy_from_slice(p);
        loss(&b, &params)
    });
    push("weights", &g.weights, &num);
    for (gi, (name, analytic)) in [("wq", &g.wq), ("wk", &g.wk), ("wv", &g.wv), ("wo", &g.wo)]
        .into_iter()
        .enumerate()
    {
        let mut flat = params.groups()[gi].clone();
        let num = numeric_grad(&mut flat, |p| {
            let mut q = params.clone();
            q.groups_mut()[gi].copy_from_slice(p);
            loss(&bundle, &q)
        });
        push(name, analytic, &num);
    }
    out
}

fn check_charbonnier(rng: &mut ChaCha8Rng, trial: usize) -> Vec<GroupError> {
    let (h, w, c) = dims(rng);
    let a = rand_frame(rng, h, w, c);
    let b = rand_frame(rng, h, w, c);
    let (_, g) = charbonnier(&a, &b, 1e-3).unwrap();
    let mut p = a.data().to_vec();
    let numeric = numeric_grad(&mut p, |v| {
        let fa = Frame::new(h, w, c, v.to_vec()).unwrap();
        charbonnier(&fa, &b, 1e-3).unwrap().0
    });
    vec![GroupError {
        operator: Operator::Charbonnier,
        trial,
        group: "prediction".into(),
        size: p.len(),
        rel_error: rel_error(g.data(), &numeric),
    }]
}

fn check_tv(rng: &mut ChaCha8Rng, trial: usize) -> Vec<GroupError> {
    let (h, w, _) = dims(rng);
    let m = rng.gen_range(1..=3);
    let bundle = FieldBundle::from_parts(
        m,
        h,
        w,
        (0..m * 2 * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        vec![1.0; m * h * w],
    )
    .unwrap();
    let pen = TvPenalty::Charbonnier(1e-3);
    let (_, g) = tv_loss(&bundle, pen);
    let mut p = bundle.fields.clone();
    let numeric = numeric_grad(&mut p, |v| {
        let mut b = bundle.clone();
        b.fields.copy_from_slice(v);
        tv_loss(&b, pen).0
    });
    vec![GroupError {
        operator: Operator::TvLoss,
        trial,
        group: "fields".into(),
        size: p.len(),
        rel_error: rel_error(&g, &numeric),
    }]
}

/// Checks `operator` on `trials` random instances derived from `seed`.
pub fn check_operator(operator: Operator, seed: u64, trials: usize, perturb: bool) -> Vec<GroupError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (operator as u64 + 1).wrapping_mul(0x9e37_79b9));
    (0..trials)
        .flat_map(|t| match operator {
            Operator::BackwardWarp => check_backward(&mut rng, t, perturb),
            Operator::DfwForwardWarp => check_dfw(&mut rng, t),
            Operator::AdaMsaWarp => check_ada_msa(&mut rng, t),
            Operator::Charbonnier => check_charbonnier(&mut rng, t),
            Operator::TvLoss => check_tv(&mut rng, t),
        })
        .collect()
}

/// Runs every operator. Operators are independent and run in parallel; the
/// report order is fixed.
pub fn run_gradcheck(opts: GradcheckOptions) -> GradcheckReport {
    use rayon::prelude::*;
    let entries = Operator::ALL
        .par_iter()
        .map(|&op| check_operator(op, opts.seed, opts.trials, opts.perturb))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    GradcheckReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operator_passes_a_few_trials() {
        let report = run_gradcheck(GradcheckOptions {
            seed: 1,
            trials: 3,
            perturb: false,
        });
        for op in Operator::ALL {
            let e = report.max_error(op).unwrap();
            assert!(e < REL_TOLERANCE, "{}: {e}", op.name());
        }
    }

    #[test]
    fn charbonnier_gradient_is_tight() {
        let errs = check_operator(Operator::Charbonnier, 9, 5, false);
        assert!(errs.iter().all(|e| e.rel_error < 1e-6));
    }

    #[test]
    fn perturbed_gradient_is_caught() {
        let report = run_gradcheck(GradcheckOptions {
            seed: 1,
            trials: 2,
            perturb: true,
        });
        assert!(!report.passed());
    }

    #[test]
    fn zero_trials_is_empty_and_passes() {
        let r = run_gradcheck(GradcheckOptions {
            seed: 0,
            trials: 0,
            perturb: false,
        });
        assert!(r.entries.is_empty() && r.passed());
    }
}
