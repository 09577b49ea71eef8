use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Regime, TrainConfig, AUTO_CLIP_NORM, AUTO_CLIP_THRESHOLD};
use super::models::{build_models, Models};
use super::steps::{
    analyzer_step, discriminator_step, generator_step, iid_step, predictor_step, Batch,
    StepCounters, StepParams, StepStats,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nets::save_network;
use crate::tensor::{poly_lr, OptimizerState};

pub const LOG_HEADER: &str = "iter,lr_s,lr_a,loss_s,obj_a,sr,gnorm_s,gnorm_a,wall_ms";

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub lr_s: f64,
    pub lr_a: f64,
    /// Loss the predictor descended.
    pub loss_s: f64,
    /// Objective the opponent ascended: `ASM ∓ λ·SR` for the analyzer, the
    /// discriminator loss for GAN baselines, 0 without an opponent.
    pub obj_a: f64,
    pub sr: f64,
    pub gnorm_s: f64,
    pub gnorm_a: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iter, r.lr_s, r.lr_a, r.loss_s, r.obj_a, r.sr, r.gnorm_s, r.gnorm_a, r.wall_ms
            );
        }
        s
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Stateful driver for one training run: owns the networks, optimizer state and the
/// deterministic sample stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<Sample>,
    models: Models,
    opt_s: OptimizerState,
    opt_a: OptimizerState,
    iter: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    clip: Option<f64>,
    counters: StepCounters,
    log: TrainLog,
    started: Instant,
}

impl Trainer {
    /// Validates the configuration and builds fresh networks. Fails before any compute
    /// on invalid configurations or an empty dataset.
    pub fn new(cfg: TrainConfig, samples: Vec<Sample>) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::config("the training set is empty"));
        }
        for s in &samples {
            if s.target.task() != cfg.task {
                return Err(Error::config(format!(
                    "sample `{}` holds a {} target but the run trains {}",
                    s.id,
                    s.target.task(),
                    cfg.task
                )));
            }
        }
        let models = build_models(&cfg)?;
        Ok(Self {
            opt_s: OptimizerState::new(cfg.optimizer_s, cfg.weight_decay),
            opt_a: OptimizerState::new(cfg.optimizer_a, cfg.weight_decay),
            clip: cfg.clip,
            cfg,
            samples,
            models,
            iter: 0,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            counters: StepCounters::default(),
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn into_models(self) -> Models {
        self.models
    }

    pub fn counters(&self) -> &StepCounters {
        &self.counters
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.max_iter
    }

    /// Gradient-norm cap currently in force (may have switched on automatically).
    pub fn clip(&self) -> Option<f64> {
        self.clip
    }

    /// The next minibatch; each epoch visits every sample once in a seed-determined order.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let mut picked = Vec::with_capacity(self.cfg.batch_size);
        while picked.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(self.epoch);
                self.order = (0..self.samples.len()).collect();
                self.order.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            picked.push(&self.samples[self.order[self.cursor]]);
            self.cursor += 1;
        }
        Batch::from_samples(&picked, self.cfg.task, self.cfg.classes)
    }

    /// Learning rates for the iteration about to run.
    pub fn learning_rates(&self) -> Result<(f64, f64)> {
        let c = &self.cfg;
        Ok((
            poly_lr(c.lr_s, self.iter, c.max_iter, c.poly_power)?,
            poly_lr(c.lr_a, self.iter, c.max_iter, c.poly_power)?,
        ))
    }

    /// Runs one training iteration of the configured regime.
    pub fn step(&mut self) -> Result<TrainRecord> {
        if self.is_done() {
            return Err(Error::usage("training already reached max_iter"));
        }
        let batch = self.next_batch()?;
        let (lr_s, lr_a) = self.learning_rates()?;
        let it = self.iter + 1;
        let ctx = |e: Error| match e {
            Error::Numeric { context, detail } => Error::numeric(
                format!("iteration {it}, {context}"),
                format!("{detail}; last good iteration {}", it - 1),
            ),
            other => other,
        };
        let cfg = &self.cfg;
        let m = &mut self.models;
        let (opponent, pred): (StepStats, StepStats) = match cfg.regime {
            Regime::Iid => {
                let p = iid_step(
                    &batch,
                    &mut m.predictor,
                    &mut self.opt_s,
                    cfg.task,
                    StepParams {
                        lr: lr_s,
                        clip: self.clip,
                    },
                    &mut self.counters,
                )
                .map_err(ctx)?;
                (StepStats::default(), p)
            }
            Regime::Asm | Regime::IidAsm => {
                let analyzer = m.analyzer.as_mut().expect("asm regime builds an analyzer");
                let a = analyzer_step(
                    &batch,
                    &m.predictor,
                    analyzer,
                    &m.taps,
                    &mut self.opt_a,
                    cfg,
                    StepParams {
                        lr: lr_a,
                        clip: self.clip,
                    },
                    &mut self.counters,
                )
                .map_err(ctx)?;
                if self.clip.is_none() && cfg.auto_clip && -a.loss > AUTO_CLIP_THRESHOLD {
                    self.clip = Some(AUTO_CLIP_NORM);
                }
                let p = predictor_step(
                    &batch,
                    &mut m.predictor,
                    analyzer,
                    &m.taps,
                    &mut self.opt_s,
                    cfg,
                    StepParams {
                        lr: lr_s,
                        clip: self.clip,
                    },
                    &mut self.counters,
                )
                .map_err(ctx)?;
                (a, p)
            }
            Regime::Gan | Regime::Cgan => {
                let conditional = cfg.regime == Regime::Cgan;
                let disc = m
                    .discriminator
                    .as_mut()
                    .expect("gan regimes build a discriminator");
                let d = discriminator_step(
                    &batch,
                    &m.predictor,
                    disc,
                    &mut self.opt_a,
                    cfg.task,
                    conditional,
                    StepParams {
                        lr: lr_a,
                        clip: self.clip,
                    },
                    &mut self.counters,
                )
                .map_err(ctx)?;
                let p = generator_step(
                    &batch,
                    &mut m.predictor,
                    disc,
                    &mut self.opt_s,
                    cfg.task,
                    conditional,
                    cfg.gan_gamma,
                    StepParams {
                        lr: lr_s,
                        clip: self.clip,
                    },
                    &mut self.counters,
                )
                .map_err(ctx)?;
                (d, p)
            }
        };
        let obj_a = match cfg.regime {
            Regime::Asm | Regime::IidAsm => -opponent.loss,
            _ => opponent.loss,
        };
        let rec = TrainRecord {
            iter: it,
            lr_s,
            lr_a: if cfg.regime.has_opponent() { lr_a } else { 0.0 },
            loss_s: pred.loss,
            obj_a,
            sr: opponent.sr,
            gnorm_s: pred.grad_norm,
            gnorm_a: opponent.grad_norm,
            wall_ms: if cfg.record_time {
                self.started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        self.iter = it;
        self.log.records.push(rec);
        Ok(rec)
    }
}

/// Files written by [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Models,
    pub log: TrainLog,
    pub counters: StepCounters,
    pub log_path: PathBuf,
    /// Final predictor checkpoint.
    pub predictor_path: PathBuf,
    /// Every checkpoint written, in order.
    pub checkpoints: Vec<PathBuf>,
}

fn save_models(models: &Models, dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut save = |net: &crate::nets::Network, name: &str| -> Result<()> {
        let path = dir.join(format!("{name}{suffix}.ckpt"));
        save_network(net, &path)?;
        out.push(path);
        Ok(())
    };
    save(&models.predictor, "predictor")?;
    if let Some(a) = &models.analyzer {
        save(a, "analyzer")?;
    }
    if let Some(d) = &models.discriminator {
        save(d, "discriminator")?;
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains to `cfg.max_iter`, writing `train_log.csv`, periodic checkpoints
/// (`predictor_iter000100.ckpt`, ...) and final `predictor.ckpt` (plus opponent) into
/// `out_dir`. On a numeric failure the log so far is written, earlier checkpoints are
/// left untouched and the error names the last one.
pub fn run_training(cfg: &TrainConfig, samples: &[Sample], out_dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), samples.to_vec())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    while !trainer.is_done() {
        if let Err(e) = trainer.step() {
            write_text(&log_path, &trainer.log().to_csv())?;
            let last = checkpoints
                .iter()
                .rev()
                .find(|p| {
                    p.file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with("predictor"))
                })
                .map_or_else(|| "none".to_string(), |p| p.display().to_string());
            return Err(match e {
                Error::Numeric { context, detail } => {
                    Error::numeric(context, format!("{detail}; last checkpoint: {last}"))
                }
                other => other,
            });
        }
        let it = trainer.iteration();
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.max_iter {
            let written = save_models(trainer.models(), out_dir, &format!("_iter{it:06}"))?;
            checkpoints.extend(written);
        }
    }
    write_text(&log_path, &trainer.log().to_csv())?;
    let finals = save_models(trainer.models(), out_dir, "")?;
    let predictor_path = finals[0].clone();
    checkpoints.extend(finals);
    let log = trainer.log().clone();
    let counters = trainer.counters().clone();
    Ok(TrainOutcome {
        models: trainer.into_models(),
        log,
        counters,
        log_path,
        predictor_path,
        checkpoints,
    })
}
