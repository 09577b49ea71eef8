use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::task::TaskKind;
use crate::tensor::OptimizerKind;
use crate::training::{Regime, SrSign, TheoryProbeConfig, TrainConfig};

/// Every key a config file or `--set` may use, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("task", "seg, depth, normal or joint"),
    ("seed", "master seed for data, initialization and shuffling"),
    ("out", "output directory"),
    ("n", "training samples to generate"),
    ("n_val", "validation samples to generate"),
    ("size", "image side length"),
    ("classes", "segmentation classes including background"),
    ("clutter", "distractor shapes per segmentation image"),
    ("data", "dataset directory holding train.txt and val.txt"),
    ("manifest", "explicit manifest file (overrides data)"),
    ("regime", "iid, gan, cgan, asm or iid+asm"),
    ("lambda", "structure-regularization weight, or auto"),
    ("lr_s", "predictor base learning rate"),
    ("lr_a", "analyzer or discriminator base learning rate"),
    ("optimizer_s", "adam or sgd"),
    ("optimizer_a", "adam or sgd"),
    ("momentum", "momentum for sgd"),
    ("weight_decay", "decoupled weight decay"),
    ("max_iter", "training iterations"),
    ("batch_size", "minibatch size"),
    ("poly_power", "exponent of the poly learning-rate schedule"),
    ("taps", "comma-separated analyzer layers in the ASM loss"),
    (
        "binarize",
        "winner-take-all segmentation outputs on the analyzer pass",
    ),
    ("clip", "global gradient-norm cap, or none"),
    (
        "auto_clip",
        "switch clipping on when the analyzer objective explodes",
    ),
    (
        "checkpoint_every",
        "intermediate checkpoint cadence (0 = final only)",
    ),
    (
        "predictor_template",
        "template name or path for the predictor",
    ),
    (
        "analyzer_template",
        "template name or path for the analyzer, or auto",
    ),
    ("width_divisor", "channel divisor applied to templates"),
    ("sr_sign", "descend, or paper_alg1 (alias ascend)"),
    ("gan_gamma", "adversarial weight of the GAN baselines"),
    (
        "iid_weight",
        "pixel-wise loss weight added to the ASM predictor loss",
    ),
    ("checkpoint", "predictor (or other network) checkpoint"),
    ("analyzer", "analyzer checkpoint"),
    ("label", "name recorded in evaluation reports"),
    ("oracle", "use ground truth in place of network predictions"),
    ("eval_batch", "batch size for inference"),
    ("sample", "sample index for loss maps"),
    ("layer", "analyzer layer for top stimuli"),
    ("filter", "filter index for top stimuli"),
    ("k", "number of top stimuli"),
    ("probe_cases", "randomized cases of the equivalence probe"),
    (
        "probe_ascent_steps",
        "ascent steps of the equilibrium probe",
    ),
    ("probe_runs", "runs per learning-rate ratio"),
    ("probe_game_steps", "steps per learning-rate-ratio run"),
];

/// Flat `key = value` configuration with schema-checked keys; later assignments win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// File the base values came from.
    pub source: Option<PathBuf>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::config(format!("unknown config key `{key}`")))
    }
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("`{pair}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get_str(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    let msg = e.to_string();
                    let msg = msg
                        .strip_prefix("configuration error: ")
                        .unwrap_or(&msg)
                        .to_string();
                    Error::config(format!("key `{key}`: cannot parse `{v}`: {msg}"))
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get_str(key)
            .map(|v| {
                parse_bool(v)
                    .ok_or_else(|| Error::config(format!("key `{key}`: `{v}` is not a boolean")))
            })
            .transpose()
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(PathBuf::from)
    }

    pub fn task(&self) -> Result<Option<TaskKind>> {
        self.get("task")
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        let d = GenConfig::default();
        Ok(GenConfig {
            task: self.task()?.unwrap_or(d.task),
            seed: self.get_or("seed", d.seed)?,
            n_train: self.get_or("n", d.n_train)?,
            n_val: self.get_or("n_val", d.n_val)?,
            size: self.get_or("size", d.size)?,
            classes: self.get_or("classes", d.classes)?,
            clutter: self.get_or("clutter", d.clutter)?,
        })
    }

    fn optimizer(&self, key: &str) -> Result<Option<OptimizerKind>> {
        let momentum = self.get_or("momentum", 0.9)?;
        match self.get_str(key) {
            None => Ok(None),
            Some("adam") => Ok(Some(OptimizerKind::adam())),
            Some("sgd") => Ok(Some(OptimizerKind::sgd(momentum))),
            Some(other) => Err(Error::config(format!(
                "key `{key}`: unknown optimizer `{other}` (adam or sgd)"
            ))),
        }
    }

    /// Training configuration for a dataset of `task` with `classes` classes. Fails on
    /// any invariant violation, before data is touched.
    pub fn train_config(&self, task: TaskKind, classes: usize) -> Result<TrainConfig> {
        let regime: Regime = self.get_or("regime", Regime::Asm)?;
        let mut c = TrainConfig::new(regime, task);
        c.classes = classes;
        c.lambda = match self.get_str("lambda") {
            None | Some("auto") => None,
            Some(_) => self.get("lambda")?,
        };
        c.lr_s = self.get_or("lr_s", c.lr_s)?;
        c.lr_a = self.get_or("lr_a", c.lr_a)?;
        if let Some(o) = self.optimizer("optimizer_s")? {
            c.optimizer_s = o;
        }
        if let Some(o) = self.optimizer("optimizer_a")? {
            c.optimizer_a = o;
        }
        c.weight_decay = self.get_or("weight_decay", c.weight_decay)?;
        c.max_iter = self.get_or("max_iter", c.max_iter)?;
        c.batch_size = self.get_or("batch_size", c.batch_size)?;
        c.poly_power = self.get_or("poly_power", c.poly_power)?;
        if let Some(t) = self.get_str("taps") {
            c.taps = Some(
                t.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
            );
        }
        if let Some(b) = self.get_bool("binarize")? {
            c.binarize = b;
        }
        c.clip = match self.get_str("clip") {
            None | Some("none") => None,
            Some(_) => self.get("clip")?,
        };
        if let Some(b) = self.get_bool("auto_clip")? {
            c.auto_clip = b;
        }
        c.seed = self.get_or("seed", c.seed)?;
        c.checkpoint_every = self.get_or("checkpoint_every", c.checkpoint_every)?;
        if let Some(t) = self.get_str("predictor_template") {
            c.predictor_template = t.to_string();
        }
        c.analyzer_template = match self.get_str("analyzer_template") {
            None | Some("auto") => None,
            Some(t) => Some(t.to_string()),
        };
        c.width_divisor = self.get_or("width_divisor", c.width_divisor)?;
        c.sr_sign = self.get_or::<SrSign>("sr_sign", c.sr_sign)?;
        c.gan_gamma = self.get_or("gan_gamma", c.gan_gamma)?;
        c.iid_weight = self.get_or("iid_weight", c.iid_weight)?;
        c.validate()?;
        Ok(c)
    }

    pub fn probe_config(&self) -> Result<TheoryProbeConfig> {
        let d = TheoryProbeConfig::default();
        Ok(TheoryProbeConfig {
            cases: self.get_or("probe_cases", d.cases)?,
            ascent_steps: self.get_or("probe_ascent_steps", d.ascent_steps)?,
            runs_per_ratio: self.get_or("probe_runs", d.runs_per_ratio)?,
            game_steps: self.get_or("probe_game_steps", d.game_steps)?,
            seed: self.get_or("seed", d.seed)?,
            ..d
        })
    }
}
