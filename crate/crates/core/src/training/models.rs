use super::config::{Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::nets::{build_network, load_template, Network, NetworkSpec};
use crate::task::TaskKind;

/// Synthetic images are single-channel.
pub const IMAGE_CHANNELS: usize = 1;

/// All networks owned by one training run.
#[derive(Debug, Clone)]
pub struct Models {
    pub predictor: Network,
    /// Analyzer with its reconstruction heads (the regularizer), for the asm regime.
    pub analyzer: Option<Network>,
    pub discriminator: Option<Network>,
    /// ASM tap layers, in analyzer order.
    pub taps: Vec<String>,
}

/// Channels of the task target as fed to an analyzer or discriminator.
pub fn target_channels(task: TaskKind, classes: usize) -> usize {
    match task {
        TaskKind::Segmentation => classes,
        TaskKind::Depth => 1,
        TaskKind::Normal => 3,
        TaskKind::Joint => 4,
    }
}

pub fn predictor_spec(cfg: &TrainConfig) -> Result<NetworkSpec> {
    load_template(&cfg.predictor_template)?
        .scaled_width(cfg.width_divisor)?
        .retarget(cfg.task, cfg.classes, IMAGE_CHANNELS)
}

pub fn analyzer_spec(cfg: &TrainConfig) -> Result<NetworkSpec> {
    load_template(cfg.analyzer_template())?
        .scaled_width(cfg.width_divisor)?
        .retarget(cfg.task, cfg.classes, IMAGE_CHANNELS)
}

/// Builds the networks a regime needs; each gets its own seed derived from `cfg.seed`.
pub fn build_models(cfg: &TrainConfig) -> Result<Models> {
    cfg.validate()?;
    let predictor = build_network(&predictor_spec(cfg)?, cfg.seed)?;
    let mut models = Models {
        predictor,
        analyzer: None,
        discriminator: None,
        taps: Vec::new(),
    };
    match cfg.regime {
        Regime::Iid => {}
        Regime::Asm | Regime::IidAsm => {
            let spec = analyzer_spec(cfg)?;
            let taps = cfg.taps.clone().unwrap_or_else(|| spec.taps.clone());
            if taps.is_empty() {
                return Err(Error::config("the analyzer declares no ASM taps"));
            }
            if let Some(t) = taps.iter().find(|t| spec.layer(t).is_none()) {
                return Err(Error::config(format!(
                    "ASM tap `{t}` is not an analyzer layer"
                )));
            }
            models.taps = taps;
            models.analyzer = Some(build_network(&spec, cfg.seed.wrapping_add(1))?);
        }
        Regime::Gan | Regime::Cgan => {
            if cfg.task == TaskKind::Joint {
                return Err(Error::config(
                    "GAN baselines support single-output tasks only",
                ));
            }
            let extra = if cfg.regime == Regime::Cgan {
                IMAGE_CHANNELS
            } else {
                0
            };
            let spec = analyzer_spec(cfg)?.discriminator(extra)?;
            models.discriminator = Some(build_network(&spec, cfg.seed.wrapping_add(2))?);
        }
    }
    Ok(models)
}
