use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "adawarp", version, about = "Rolling-shutter simulation and correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Render RS/GS frame pairs and exact displacement fields.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Readout ratio s in [0, 1].
        #[arg(long)]
        readout_ratio: Option<f64>,
        /// Scene family: smooth, two-layer or static.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Correct the centre of up to three RS frames.
    Correct {
        #[command(flatten)]
        common: Common,
        /// Input frames in temporal order (PFM or PPM).
        #[arg(long, num_args = 1..=3)]
        frames: Vec<PathBuf>,
        /// A `simulate` output directory; uses the frames around --center.
        #[arg(long, conflicts_with = "frames")]
        input: Option<PathBuf>,
        /// Centre frame index inside --input.
        #[arg(long, default_value_t = 1)]
        center: usize,
        /// GS truth (fit mode, metrics).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// True displacement field of the centre frame (oracle mode).
        #[arg(long)]
        gt_field: Option<PathBuf>,
        /// oracle, fit or self.
        #[arg(long)]
        mode: Option<String>,
        /// awm, dfw, backward or fusion-only.
        #[arg(long)]
        warper: Option<String>,
    },
    /// PSNR/SSIM of an estimate against a reference.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Scale one analytic gradient to confirm the check can fail.
        #[arg(long, hide = true)]
        perturb_gradient: bool,
    },
    /// Run an ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Built-in grid: warpers, fields, frames or readout.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Restrict to the first N seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            common,
            frames,
            readout_ratio,
            suite,
        } => commands::simulate(&common, frames, readout_ratio, suite.as_deref()),
        Command::Correct {
            common,
            frames,
            input,
            center,
            truth,
            gt_field,
            mode,
            warper,
        } => commands::correct(
            &common,
            commands::CorrectInputs {
                frames,
                input,
                center,
                truth,
                gt_field,
                mode,
                warper,
            },
        ),
        Command::Evaluate {
            common,
            estimate,
            truth,
        } => commands::evaluate(&common, &estimate, &truth),
        Command::Gradcheck {
            common,
            trials,
            perturb_gradient,
        } => commands::gradcheck(&common, trials, perturb_gradient),
        Command::Ablate {
            common,
            preset,
            seeds,
        } => commands::ablate(&common, preset.as_deref(), seeds),
    };
    match outcome {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
