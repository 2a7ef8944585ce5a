use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use adawarp::corrector::{self, CorrectorConfig, Mode, Warper};
use adawarp::experiment::{self, ExperimentSpec, SceneFamily, CSV_SCHEMA_VERSION};
use adawarp::gradcheck::{run_gradcheck, GradcheckOptions, Operator, REL_TOLERANCE};
use adawarp::image::Frame;
use adawarp::io;
use adawarp::motion::FieldBundle;
use adawarp::opt::write_loss_trace;
use adawarp::sim::{make_sequence, SceneParams, SceneSpec};
use adawarp::warp::ada_msa_warp_query;
use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::Common;

pub enum Status {
    Ok,
    CheckFailed,
}

/// Bad command-line usage; maps to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<adawarp::Error>() {
        Some(adawarp::Error::InvalidArgument(_))
        | Some(adawarp::Error::UnsupportedScene(_))
        | Some(adawarp::Error::Json(_)) => 2,
        _ => 1,
    }
}

fn global_threads(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return usage("--jobs must be >= 1");
    }
    // Ignored if a pool already exists (only possible in-process).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    Ok(())
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let v = serde_json::from_slice(&bytes).map_err(adawarp::Error::from);
            Ok(v.with_context(|| format!("parsing {}", p.display()))?)
        }
    }
}

fn out_dir(common: &Common) -> Result<&Path> {
    match &common.out {
        Some(p) => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(p)
        }
        None => usage("--out is required"),
    }
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_frame(dir: &Path, stem: &str, frame: &Frame<f64>) -> Result<()> {
    io::write_pfm(dir.join(format!("{stem}.pfm")), frame)?;
    io::write_ppm(dir.join(format!("{stem}.ppm")), frame)?;
    Ok(())
}

fn read_frame64(path: &Path) -> Result<Frame<f64>> {
    let f = io::read_frame(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(f.cast())
}

fn parse_suite(s: &str) -> Result<SceneFamily> {
    Ok(match s {
        "smooth" => SceneFamily::Smooth,
        "two-layer" => SceneFamily::TwoLayer,
        "static" => SceneFamily::Static,
        _ => return usage(format!("unknown suite {s:?} (smooth | two-layer | static)")),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub suite: SceneFamily,
    pub seed: u64,
    pub frames: usize,
    pub readout_ratio: f64,
    /// Explicit scene; when absent the suite generates one from the seed.
    pub scene: Option<SceneParams>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            suite: SceneFamily::Smooth,
            seed: 0,
            frames: 5,
            readout_ratio: 0.8,
            scene: None,
        }
    }
}

pub fn simulate(
    common: &Common,
    frames: Option<usize>,
    readout_ratio: Option<f64>,
    suite: Option<&str>,
) -> Result<Status> {
    global_threads(common.jobs)?;
    let mut cfg: SimulateConfig = load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = frames {
        cfg.frames = n;
    }
    if let Some(s) = readout_ratio {
        cfg.readout_ratio = s;
    }
    if let Some(s) = suite {
        cfg.suite = parse_suite(s)?;
    }
    if cfg.frames == 0 {
        return usage("--frames must be >= 1");
    }
    let scene = match &cfg.scene {
        Some(p) => p.clone(),
        None => {
            let mut p = cfg.suite.params(cfg.seed);
            // cover every row time of the last frame
            p.time_span[1] = p.time_span[1].max(cfg.frames as f64 + 0.5);
            p
        }
    };
    cfg.scene = Some(scene.clone());
    let spec = SceneSpec::<f64>::from_params(&scene)?;
    let seq = make_sequence(&spec, cfg.frames, cfg.readout_ratio)?;
    let dir = out_dir(common)?;
    for (k, pair) in seq.iter().enumerate() {
        write_frame(dir, &format!("frame_{k:04}_rs"), &pair.rs)?;
        write_frame(dir, &format!("frame_{k:04}_gs"), &pair.gs)?;
        io::write_flow(dir.join(format!("gt_field_{k:04}.pfm")), &pair.gt_bundle.modulated(0))?;
    }
    write_json(dir.join("scene.json"), &scene)?;
    write_json(dir.join("config.json"), &cfg)?;
    println!(
        "wrote {} frame pairs (s = {}) to {}",
        seq.len(),
        cfg.readout_ratio,
        dir.display()
    );
    Ok(Status::Ok)
}

pub struct CorrectInputs {
    pub frames: Vec<PathBuf>,
    pub input: Option<PathBuf>,
    pub center: usize,
    pub truth: Option<PathBuf>,
    pub gt_field: Option<PathBuf>,
    pub mode: Option<String>,
    pub warper: Option<String>,
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

pub fn correct(common: &Common, args: CorrectInputs) -> Result<Status> {
    global_threads(common.jobs)?;
    let mut cfg: CorrectorConfig = load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(w) = &args.warper {
        cfg.warper = w.parse::<Warper>()?;
    }
    let (mut frame_paths, mut truth, mut gt) = (args.frames, args.truth, args.gt_field);
    if let Some(dir) = &args.input {
        let (_, offsets) = cfg.frame_layout();
        for d in &offsets {
            let k = args.center as i64 + *d as i64;
            if k < 0 {
                return usage(format!("--center {} leaves no previous frame", args.center));
            }
            frame_paths.push(dir.join(format!("frame_{k:04}_rs.pfm")));
        }
        truth = truth.or_else(|| existing(dir.join(format!("frame_{:04}_gs.pfm", args.center))));
        gt = gt.or_else(|| existing(dir.join(format!("gt_field_{:04}.pfm", args.center))));
    } else if frame_paths.is_empty() {
        return usage("give --frames or --input");
    } else {
        cfg.frames = frame_paths.len();
    }
    let frames = frame_paths
        .iter()
        .map(|p| read_frame64(p))
        .collect::<Result<Vec<_>>>()?;
    let truth_frame = truth.as_deref().map(read_frame64).transpose()?;
    let gt_bundle = match &gt {
        Some(p) => {
            let flow = io::read_flow(p).with_context(|| format!("reading {}", p.display()))?;
            Some(FieldBundle::from_flow(&flow).cast::<f64>())
        }
        None => None,
    };
    let result = corrector::correct(&frames, &cfg, truth_frame.as_ref(), gt_bundle.as_ref())?;

    let dir = out_dir(common)?;
    write_frame(dir, "gs_estimate", &result.gs_estimate)?;
    for (k, b) in result.bundles.iter().enumerate() {
        io::write_bundle(dir.join(format!("bundle_{k}.pfm")), b)?;
    }
    write_loss_trace(fs::File::create(dir.join("loss_trace.csv"))?, &result.loss_trace)?;
    if let (Warper::Awm, Some(params)) = (cfg.warper, &result.attention) {
        let (c, _) = cfg.frame_layout();
        let (center, bundle) = match cfg.mode {
            Mode::Oracle => (&frames[c], &result.bundles[0]),
            _ => (&frames[c], &result.bundles[c]),
        };
        let out = ada_msa_warp_query(center, center, bundle, params)?;
        if let Some(maps) = out.attention {
            for i in 0..bundle.m() {
                io::write_pfm(dir.join(format!("attention_field_{i:02}.pfm")), &maps.field_map(i))?;
            }
        }
    }
    if let Some(t) = &truth_frame {
        let m = corrector::evaluate(&result, t)?;
        write_eval_csv(&dir.join("metrics.csv"), &m)?;
        println!(
            "psnr {:.3} dB, ssim {:.4} (interior {:.3} dB, {:.4})",
            m.psnr, m.ssim, m.psnr_interior, m.ssim_interior
        );
    }
    write_json(
        dir.join("config.json"),
        &json!({
            "corrector": cfg,
            "frames": frame_paths,
            "truth": truth,
            "gt_field": gt,
            "frame_offsets": result.frame_offsets,
        }),
    )?;
    write_json(
        dir.join("timing.json"),
        &json!({ "wall_time_s": result.wall_time.as_secs_f64() }),
    )?;
    Ok(Status::Ok)
}

fn write_eval_csv(path: &Path, m: &corrector::Metrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(experiment::EVAL_HEADER)?;
    w.write_record([
        m.psnr.to_string(),
        m.ssim.to_string(),
        m.psnr_interior.to_string(),
        m.ssim_interior.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn evaluate(common: &Common, estimate: &Path, truth: &Path) -> Result<Status> {
    global_threads(common.jobs)?;
    let (e, t) = (read_frame64(estimate)?, read_frame64(truth)?);
    let m = corrector::evaluate_frame(&e, &t)?;
    println!(
        "psnr {:.3} dB, ssim {:.4} (interior {:.3} dB, {:.4})",
        m.psnr, m.ssim, m.psnr_interior, m.ssim_interior
    );
    if common.out.is_some() {
        let dir = out_dir(common)?;
        write_eval_csv(&dir.join("metrics.csv"), &m)?;
        write_json(
            dir.join("config.json"),
            &json!({ "estimate": estimate, "truth": truth }),
        )?;
    }
    Ok(Status::Ok)
}

pub fn gradcheck(common: &Common, trials: usize, perturb: bool) -> Result<Status> {
    global_threads(common.jobs)?;
    let opts = GradcheckOptions {
        seed: common.seed.unwrap_or(0),
        trials,
        perturb,
    };
    let report = run_gradcheck(opts);
    for op in Operator::ALL {
        match report.max_error(op) {
            Some(e) => println!(
                "{:<18} max rel error {e:.3e}  {}",
                op.name(),
                if e < REL_TOLERANCE { "ok" } else { "FAIL" }
            ),
            None => println!("{:<18} no trials", op.name()),
        }
    }
    if common.out.is_some() {
        let dir = out_dir(common)?;
        let mut w = csv::Writer::from_path(dir.join("gradcheck.csv"))?;
        w.write_record(["operator", "trial", "group", "size", "rel_error"])?;
        for e in &report.entries {
            w.write_record([
                e.operator.name().to_string(),
                e.trial.to_string(),
                e.group.clone(),
                e.size.to_string(),
                e.rel_error.to_string(),
            ])?;
        }
        w.flush()?;
        write_json(
            dir.join("config.json"),
            &json!({ "seed": opts.seed, "trials": trials, "perturb": perturb, "tolerance": REL_TOLERANCE }),
        )?;
    }
    Ok(if report.passed() {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}

pub fn ablate(common: &Common, preset: Option<&str>, seeds: Option<usize>) -> Result<Status> {
    if common.jobs == 0 {
        return usage("--jobs must be >= 1");
    }
    let mut spec: ExperimentSpec = match (preset, &common.config) {
        (Some(name), _) => match ExperimentSpec::preset(name) {
            Some(s) => s,
            None => {
                return usage(format!(
                    "unknown preset {name:?} ({})",
                    ExperimentSpec::PRESETS.join(" | ")
                ))
            }
        },
        (None, Some(path)) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&bytes)
                .map_err(adawarp::Error::from)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => return usage("give --preset or --config"),
    };
    if let Some(s) = common.seed {
        spec.base.seed = s;
    }
    if let Some(n) = seeds {
        if n == 0 {
            return usage("--seeds must be >= 1");
        }
        spec.seeds.truncate(n);
    }
    let Some(dir) = &common.out else {
        return usage("--out is required");
    };
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return usage(format!("{} is not empty; every run needs its own directory", dir.display()));
    }
    fs::create_dir_all(dir)?;
    let report = experiment::run_experiment(&spec, common.jobs)?;
    experiment::write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &report)?;
    experiment::write_runs_csv(fs::File::create(dir.join("runs.csv"))?, &report)?;
    write_json(
        dir.join("experiment.json"),
        &json!({ "csv_schema": CSV_SCHEMA_VERSION, "spec": spec }),
    )?;
    let times: Vec<f64> = report.cells.iter().map(|c| c.wall_time_s).collect();
    write_json(dir.join("timing.json"), &json!({ "cell_wall_time_s": times }))?;
    println!("{:>4} {:<12} {:>3} {:>6} {:>6} {:>9} {:>7}", "cell", "warper", "M", "frames", "ratio", "psnr", "ssim");
    for c in &report.cells {
        let cfg = &c.cell.config;
        println!(
            "{:>4} {:<12} {:>3} {:>6} {:>6} {:>9.3} {:>7.4}",
            c.cell.index,
            cfg.warper.name(),
            cfg.m,
            cfg.frames,
            c.cell.test_ratio,
            c.metrics.psnr,
            c.metrics.ssim
        );
    }
    Ok(Status::Ok)
}
