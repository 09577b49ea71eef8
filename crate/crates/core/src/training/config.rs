use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::task::TaskKind;
use crate::tensor::OptimizerKind;

/// Which players are trained and against what.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Predictor alone under its pixel-wise loss.
    Iid,
    /// IID loss plus an unconditional discriminator.
    Gan,
    /// IID loss plus a discriminator that also sees the image.
    Cgan,
    /// Alternating analyzer ascent and predictor descent on the ASM loss.
    Asm,
    /// ASM with the pixel-wise loss added to the predictor objective at equal weight.
    IidAsm,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Iid => "iid",
            Regime::Gan => "gan",
            Regime::Cgan => "cgan",
            Regime::Asm => "asm",
            Regime::IidAsm => "iid+asm",
        }
    }

    pub fn has_opponent(self) -> bool {
        self != Regime::Iid
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Regime::Iid),
            "gan" => Ok(Regime::Gan),
            "cgan" => Ok(Regime::Cgan),
            "asm" => Ok(Regime::Asm),
            "iid+asm" => Ok(Regime::IidAsm),
            other => Err(Error::config(format!(
                "unknown regime `{other}` (expected iid, gan, cgan, asm or iid+asm)"
            ))),
        }
    }
}

/// Direction of the structure-regularization term in the analyzer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrSign {
    /// The analyzer and regularizer minimize the reconstruction loss.
    Descend,
    /// The reconstruction loss is ascended together with the ASM term.
    Ascend,
}

impl SrSign {
    pub fn as_str(self) -> &'static str {
        match self {
            SrSign::Descend => "descend",
            SrSign::Ascend => "paper_alg1",
        }
    }

    /// Coefficient of `λ·SR` in the loss the analyzer minimizes.
    pub fn coefficient(self) -> f64 {
        match self {
            SrSign::Descend => 1.0,
            SrSign::Ascend => -1.0,
        }
    }
}

impl FromStr for SrSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descend" => Ok(SrSign::Descend),
            "paper_alg1" | "ascend" => Ok(SrSign::Ascend),
            other => Err(Error::config(format!(
                "unknown sr_sign `{other}` (expected descend, ascend or paper_alg1)"
            ))),
        }
    }
}

/// Analyzer objective above which gradient clipping switches on automatically.
pub const AUTO_CLIP_THRESHOLD: f64 = 1e3;
/// Global gradient norm cap used once automatic clipping is active.
pub const AUTO_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub task: TaskKind,
    /// Number of classes for segmentation; ignored otherwise.
    pub classes: usize,
    /// Structure-regularization weight; `None` picks the task default.
    pub lambda: Option<f64>,
    pub lr_s: f64,
    pub lr_a: f64,
    pub optimizer_s: OptimizerKind,
    pub optimizer_a: OptimizerKind,
    pub weight_decay: f64,
    pub max_iter: usize,
    pub batch_size: usize,
    pub poly_power: f64,
    /// Analyzer layers entering the ASM loss; `None` uses the template's taps.
    pub taps: Option<Vec<String>>,
    /// Winner-take-all projection of segmentation predictions on the analyzer pass.
    pub binarize: bool,
    pub clip: Option<f64>,
    pub auto_clip: bool,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many iterations (0 = final only).
    pub checkpoint_every: usize,
    pub predictor_template: String,
    /// `None` picks the analyzer matching the task.
    pub analyzer_template: Option<String>,
    pub width_divisor: usize,
    pub sr_sign: SrSign,
    pub gan_gamma: f64,
    /// Weight of an extra pixel-wise loss added to the predictor's ASM objective.
    pub iid_weight: f64,
    /// Record wall-clock milliseconds in the log (breaks byte-identical logs).
    pub record_time: bool,
}

impl TrainConfig {
    pub fn new(regime: Regime, task: TaskKind) -> Self {
        Self {
            regime,
            task,
            classes: 4,
            lambda: None,
            lr_s: 1e-3,
            lr_a: 1e-3,
            optimizer_s: OptimizerKind::adam(),
            optimizer_a: OptimizerKind::adam(),
            weight_decay: 1e-5,
            max_iter: 2000,
            batch_size: 4,
            poly_power: 0.9,
            taps: None,
            binarize: task == TaskKind::Segmentation,
            clip: None,
            auto_clip: true,
            seed: 0,
            checkpoint_every: 0,
            predictor_template: "desk_predictor".into(),
            analyzer_template: None,
            width_divisor: crate::nets::DEFAULT_WIDTH_DIVISOR,
            sr_sign: SrSign::Descend,
            gan_gamma: crate::losses::DEFAULT_GAN_GAMMA,
            iid_weight: if regime == Regime::IidAsm { 1.0 } else { 0.0 },
            record_time: false,
        }
    }

    /// λ = 2 for two-class segmentation, 10 otherwise.
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(
            if self.task == TaskKind::Segmentation && self.classes == 2 {
                2.0
            } else {
                10.0
            },
        )
    }

    pub fn analyzer_template(&self) -> &str {
        if let Some(t) = &self.analyzer_template {
            return t;
        }
        match self.task {
            TaskKind::Segmentation if self.classes == 2 => "figure_ground_analyzer",
            TaskKind::Segmentation => "voc_analyzer",
            TaskKind::Depth | TaskKind::Normal => "dense_analyzer",
            TaskKind::Joint => "joint_analyzer",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr_s) || !positive(self.lr_a) {
            return Err(Error::config("learning rates must be positive and finite"));
        }
        if self.lr_a > self.lr_s {
            return Err(Error::config(format!(
                "lr_a = {} exceeds lr_s = {}: the analyzer's learning rate must not be larger than the predictor's",
                self.lr_a, self.lr_s
            )));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::config("lambda must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !positive(self.poly_power) {
            return Err(Error::config("poly_power must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if let Some(c) = self.clip {
            if !positive(c) {
                return Err(Error::config("clip must be positive"));
            }
        }
        if !(self.gan_gamma.is_finite() && self.gan_gamma >= 0.0) {
            return Err(Error::config("gan_gamma must be non-negative"));
        }
        if !(self.iid_weight.is_finite() && self.iid_weight >= 0.0) {
            return Err(Error::config("iid_weight must be non-negative"));
        }
        if self.width_divisor == 0 {
            return Err(Error::config("width_divisor must be at least 1"));
        }
        if self.task == TaskKind::Segmentation && !(2..=255).contains(&self.classes) {
            return Err(Error::config(
                "segmentation needs between 2 and 255 classes",
            ));
        }
        if matches!(self.taps.as_deref(), Some([])) {
            return Err(Error::config("the ASM tap set must not be empty"));
        }
        Ok(())
    }
}
