use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motion::BlockMatchParams;
use crate::opt::{AdamConfig, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Warp the centre frame with the true displacement; no optimisation.
    Oracle,
    /// Fit the bundles against the GS truth.
    Fit,
    /// Fit the bundles for agreement between the warped frames.
    #[serde(rename = "self")]
    SelfSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warper {
    Awm,
    Dfw,
    Backward,
    FusionOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Oracle => "oracle",
            Mode::Fit => "fit",
            Mode::SelfSupervised => "self",
        }
    }
}

impl Warper {
    pub const ALL: [Warper; 4] = [Warper::Awm, Warper::Dfw, Warper::Backward, Warper::FusionOnly];

    pub fn name(self) -> &'static str {
        match self {
            Warper::Awm => "awm",
            Warper::Dfw => "dfw",
            Warper::Backward => "backward",
            Warper::FusionOnly => "fusion-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Warper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "fit" => Ok(Mode::Fit),
            "self" => Ok(Mode::SelfSupervised),
            _ => invalid(format!("unknown mode {s:?} (oracle | fit | self)")),
        }
    }
}

impl FromStr for Warper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Warper::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .map_or_else(
                || invalid(format!("unknown warper {s:?} (awm | dfw | backward | fusion-only)")),
                Ok,
            )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorConfig {
    /// Displacement fields per frame for the attention warper. The single-field
    /// warpers always use one.
    pub m: usize,
    pub levels: usize,
    /// Iterations at the coarsest level; each finer level gets half.
    pub iterations: usize,
    pub mode: Mode,
    pub warper: Warper,
    /// 1 = [centre], 2 = [centre, next], 3 = [previous, centre, next].
    pub frames: usize,
    pub readout_ratio: f64,
    pub seed: u64,
    pub jitter: f64,
    pub heads: usize,
    pub weight_lr_scale: f64,
    pub attention_lr_scale: f64,
    /// Divide the TV weight by the field count so each field is regularised
    /// as strongly as a single-field bundle.
    pub tv_mean_over_fields: bool,
    pub block_match: BlockMatchParams,
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            m: 9,
            levels: 3,
            iterations: 200,
            mode: Mode::Fit,
            warper: Warper::Awm,
            frames: 3,
            readout_ratio: 0.8,
            seed: 0,
            jitter: 0.5,
            heads: 2,
            weight_lr_scale: 1.0,
            attention_lr_scale: 0.01,
            tv_mean_over_fields: true,
            block_match: BlockMatchParams::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("M must be >= 1");
        }
        if self.levels == 0 {
            return invalid("levels must be >= 1");
        }
        if !(1..=3).contains(&self.frames) {
            return invalid(format!("frame count must be 1, 2 or 3, got {}", self.frames));
        }
        if !(0.0..=1.0).contains(&self.readout_ratio) {
            return invalid(format!("readout ratio must lie in [0, 1], got {}", self.readout_ratio));
        }
        if self.heads == 0 {
            return invalid("heads must be >= 1");
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return invalid("jitter must be finite and >= 0");
        }
        for (name, v) in [
            ("weight_lr_scale", self.weight_lr_scale),
            ("attention_lr_scale", self.attention_lr_scale),
            ("base_lr", self.adam.base_lr),
            ("min_lr", self.adam.min_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be finite and >= 0"));
            }
        }
        self.loss.validate()
    }

    /// Weight of the summed TV term for bundles of `m` fields.
    pub fn tv_weight(&self, m: usize) -> f64 {
        if self.tv_mean_over_fields {
            self.loss.lambda_tv / m as f64
        } else {
            self.loss.lambda_tv
        }
    }

    /// Iterations at pyramid level `level` (0 = full resolution).
    pub fn iterations_at(&self, level: usize) -> usize {
        let from_coarsest = self.levels - 1 - level;
        (self.iterations >> from_coarsest.min(63)).max(1)
    }

    /// Index of the centre frame and each input's time offset from it.
    pub fn frame_layout(&self) -> (usize, Vec<f64>) {
        match self.frames {
            1 => (0, vec![0.0]),
            2 => (0, vec![0.0, 1.0]),
            _ => (1, vec![-1.0, 0.0, 1.0]),
        }
    }
}
