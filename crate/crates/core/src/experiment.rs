//! Seeded ablation grids over corrector configurations.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{correct, evaluate, CorrectorConfig, Metrics, Mode, Warper};
use crate::error::{invalid, Error, Result};
use crate::image::Frame;
use crate::motion::FieldBundle;
use crate::sim::{gt_displacement, render_gs, render_rs, suite, SceneParams, SceneSpec};
use crate::Scalar;

/// Bumped whenever a CSV header below changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 15] = [
    "cell",
    "suite",
    "mode",
    "warper",
    "m",
    "frames",
    "readout_ratio",
    "test_ratio",
    "seeds",
    "psnr",
    "ssim",
    "psnr_interior",
    "ssim_interior",
    "final_loss",
    "steps",
];

pub const RUNS_HEADER: [&str; 12] = [
    "cell",
    "seed",
    "warper",
    "m",
    "frames",
    "test_ratio",
    "psnr",
    "ssim",
    "psnr_interior",
    "ssim_interior",
    "final_loss",
    "steps",
];

/// Header of the single-row `metrics.csv` written by `correct` and `evaluate`.
pub const EVAL_HEADER: [&str; 4] = ["psnr", "ssim", "psnr_interior", "ssim_interior"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneFamily {
    Smooth,
    TwoLayer,
    Static,
}

impl SceneFamily {
    pub fn name(self) -> &'static str {
        match self {
            SceneFamily::Smooth => "smooth",
            SceneFamily::TwoLayer => "two-layer",
            SceneFamily::Static => "static",
        }
    }

    pub fn params(self, seed: u64) -> SceneParams {
        match self {
            SceneFamily::Smooth => suite::smooth_scene(seed),
            SceneFamily::TwoLayer => suite::two_layer_scene(seed),
            SceneFamily::Static => suite::static_scene(seed),
        }
    }
}

/// Inputs and references for one correction: RS frames around `t = 1`.
#[derive(Debug, Clone)]
pub struct Case<T> {
    pub frames: Vec<Frame<T>>,
    pub truth: Frame<T>,
    pub gt_bundle: FieldBundle<T>,
}

/// Renders the frames `config` expects from `scene`, with the centre frame at
/// `t = 1` and readout ratio `test_ratio`.
pub fn build_case<T: Scalar>(
    scene: &SceneSpec<T>,
    config: &CorrectorConfig,
    test_ratio: f64,
) -> Result<Case<T>> {
    let (_, offsets) = config.frame_layout();
    let frames = offsets
        .iter()
        .map(|d| render_rs(scene, 1.0 + d, test_ratio))
        .collect::<Result<Vec<_>>>()?;
    Ok(Case {
        frames,
        truth: render_gs(scene, 1.0)?,
        gt_bundle: gt_displacement(scene, 1.0, test_ratio)?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub warpers: Vec<Warper>,
    pub m: Vec<usize>,
    pub frames: Vec<usize>,
    /// Readout ratios the inputs are rendered with; the corrector keeps
    /// assuming its configured ratio.
    pub test_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub suite: SceneFamily,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: CorrectorConfig,
    /// Empty axes fall back to the value in `base`.
    #[serde(default)]
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub config: CorrectorConfig,
    pub test_ratio: f64,
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return invalid("experiment needs at least one seed");
        }
        self.base.validate()?;
        for c in self.cells() {
            c.config.validate()?;
            if !(0.0..=1.0).contains(&c.test_ratio) {
                return invalid(format!("test ratio {} outside [0, 1]", c.test_ratio));
            }
        }
        Ok(())
    }

    /// Grid cells in row-major order: warper, then M, frames, test ratio.
    pub fn cells(&self) -> Vec<Cell> {
        let b = &self.base;
        let mut out = Vec::new();
        for &warper in &or_base(&self.grid.warpers, b.warper) {
            for &m in &or_base(&self.grid.m, b.m) {
                for &frames in &or_base(&self.grid.frames, b.frames) {
                    for &test_ratio in &or_base(&self.grid.test_ratios, b.readout_ratio) {
                        out.push(Cell {
                            index: out.len(),
                            config: CorrectorConfig {
                                warper,
                                m,
                                frames,
                                ..b.clone()
                            },
                            test_ratio,
                        });
                    }
                }
            }
        }
        out
    }

    /// The built-in ablations: `warpers`, `fields`, `frames` and `readout`.
    pub fn preset(name: &str) -> Option<Self> {
        let seeds: Vec<u64> = (0..5).collect();
        let base = CorrectorConfig::default();
        let spec = |suite, base, grid| ExperimentSpec {
            name: name.to_string(),
            suite,
            seeds: seeds.clone(),
            base,
            grid,
        };
        Some(match name {
            "warpers" => spec(
                SceneFamily::TwoLayer,
                base,
                Grid {
                    warpers: Warper::ALL.to_vec(),
                    ..Grid::default()
                },
            ),
            "fields" => spec(
                SceneFamily::TwoLayer,
                base,
                Grid {
                    m: vec![2, 9],
                    ..Grid::default()
                },
            ),
            "frames" => spec(
                SceneFamily::Smooth,
                base,
                Grid {
                    frames: vec![3, 2, 1],
                    ..Grid::default()
                },
            ),
            "readout" => {
                let s0 = base.readout_ratio;
                spec(
                    SceneFamily::Smooth,
                    CorrectorConfig {
                        mode: Mode::SelfSupervised,
                        ..base
                    },
                    Grid {
                        test_ratios: vec![s0, s0 / 4.0],
                        ..Grid::default()
                    },
                )
            }
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 4] = ["warpers", "fields", "frames", "readout"];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub cell: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub final_loss: Option<f64>,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub metrics: Metrics,
    pub final_loss: Option<f64>,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl ExperimentReport {
    pub fn cell_psnr(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.metrics.psnr).collect()
    }
}

fn run_one(spec: &ExperimentSpec, cell: &Cell, seed: u64) -> Result<RunRecord> {
    let scene = SceneSpec::<f64>::from_params(&spec.suite.params(seed))?;
    let case = build_case(&scene, &cell.config, cell.test_ratio)?;
    let config = CorrectorConfig {
        seed: cell.config.seed ^ seed,
        ..cell.config.clone()
    };
    let r = correct(&case.frames, &config, Some(&case.truth), Some(&case.gt_bundle))?;
    Ok(RunRecord {
        cell: cell.index,
        seed,
        metrics: evaluate(&r, &case.truth)?,
        final_loss: r.loss_trace.last().map(|t| t.total),
        steps: r.loss_trace.len(),
        wall_time_s: r.wall_time.as_secs_f64(),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs every (cell, seed) pair on a pool of `jobs` threads. Results are
/// ordered by cell, then seed, whatever the completion order.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    if jobs == 0 {
        return invalid("jobs must be >= 1");
    }
    let cells = spec.cells();
    let tasks: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(c, s)| run_one(spec, c, *s))
            .collect::<Result<_>>()
    })?;
    let per = spec.seeds.len();
    let summaries = cells
        .iter()
        .zip(runs.chunks(per))
        .map(|(cell, rs)| {
            let avg = |f: fn(&Metrics) -> f64| mean(rs.iter().map(|r| f(&r.metrics)));
            CellSummary {
                cell: cell.clone(),
                metrics: Metrics {
                    psnr: avg(|m| m.psnr),
                    ssim: avg(|m| m.ssim),
                    psnr_interior: avg(|m| m.psnr_interior),
                    ssim_interior: avg(|m| m.ssim_interior),
                },
                final_loss: rs
                    .iter()
                    .map(|r| r.final_loss)
                    .collect::<Option<Vec<_>>>()
                    .map(|v| mean(v.into_iter())),
                steps: rs.iter().map(|r| r.steps).sum(),
                wall_time_s: rs.iter().map(|r| r.wall_time_s).sum(),
            }
        })
        .collect();
    Ok(ExperimentReport {
        spec: spec.clone(),
        runs,
        cells: summaries,
    })
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per cell in grid order. Wall time is left out so reruns are
/// byte-identical.
pub fn write_metrics_csv<W: Write>(out: W, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for c in &report.cells {
        let cfg = &c.cell.config;
        w.write_record([
            c.cell.index.to_string(),
            report.spec.suite.name().to_string(),
            cfg.mode.to_string(),
            cfg.warper.to_string(),
            cfg.m.to_string(),
            cfg.frames.to_string(),
            cfg.readout_ratio.to_string(),
            c.cell.test_ratio.to_string(),
            report.spec.seeds.len().to_string(),
            c.metrics.psnr.to_string(),
            c.metrics.ssim.to_string(),
            c.metrics.psnr_interior.to_string(),
            c.metrics.ssim_interior.to_string(),
            opt_str(c.final_loss),
            c.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_runs_csv<W: Write>(out: W, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in &report.runs {
        let cell = &report.cells[r.cell].cell;
        w.write_record([
            r.cell.to_string(),
            r.seed.to_string(),
            cell.config.warper.to_string(),
            cell.config.m.to_string(),
            cell.config.frames.to_string(),
            cell.test_ratio.to_string(),
            r.metrics.psnr.to_string(),
            r.metrics.ssim.to_string(),
            r.metrics.psnr_interior.to_string(),
            r.metrics.ssim_interior.to_string(),
            opt_str(r.final_loss),
            r.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
