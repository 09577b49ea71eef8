//! Single parameter updates for each player.

use super::config::TrainConfig;
use crate::data::{image_batch, target_batch, Sample};
use crate::error::{Error, Result};
use crate::losses::{asm_loss, gan_losses, iid_loss, sr_loss, sr_loss_logits, LossValue, NORM_EPS};
use crate::nets::{binarize_wta, Network};
use crate::task::TaskKind;
use crate::tensor::{
    clip_gradients, grad_check, GradCheckReport, Graph, OptimizerState, Tensor, Var,
};

/// One minibatch: images `[N, 1, H, W]` and targets in head order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub image: Tensor,
    pub targets: Vec<Tensor>,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample], task: TaskKind, classes: usize) -> Result<Self> {
        Ok(Self {
            image: image_batch(samples)?,
            targets: target_batch(samples, task, classes)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Analyzer,
    Predictor,
    Discriminator,
    Generator,
}

/// Instrumentation of what each update actually did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepCounters {
    pub analyzer_updates: usize,
    pub predictor_updates: usize,
    pub discriminator_updates: usize,
    pub generator_updates: usize,
    /// Winner-take-all projections performed while updating the analyzer.
    pub binarized_analyzer_passes: usize,
    /// Winner-take-all projections performed while updating the predictor.
    pub binarized_predictor_passes: usize,
    /// Every update in execution order.
    pub trace: Vec<Phase>,
}

impl StepCounters {
    fn record(&mut self, phase: Phase) {
        match phase {
            Phase::Analyzer => self.analyzer_updates += 1,
            Phase::Predictor => self.predictor_updates += 1,
            Phase::Discriminator => self.discriminator_updates += 1,
            Phase::Generator => self.generator_updates += 1,
        }
        self.trace.push(phase);
    }
}

/// Values measured during one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// The loss the updated player minimized (negated objective for ascent players).
    pub loss: f64,
    /// ASM term (asm steps) or adversarial term (GAN steps).
    pub asm: f64,
    /// Structure-regularization value (analyzer steps only).
    pub sr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Learning rate and clipping for one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub lr: f64,
    pub clip: Option<f64>,
}

/// Maps raw predictor heads to the structured outputs the analyzer sees:
/// class probabilities, depth as is, unit normals.
pub fn structured_outputs(g: &mut Graph, task: TaskKind, heads: &[Var]) -> Result<Vec<Var>> {
    match task {
        TaskKind::Segmentation => Ok(vec![g.softmax_channels(heads[0])?]),
        TaskKind::Depth => Ok(vec![heads[0]]),
        TaskKind::Normal => Ok(vec![g.normalize_channels(heads[0], NORM_EPS)?]),
        TaskKind::Joint => Ok(vec![heads[0], g.normalize_channels(heads[1], NORM_EPS)?]),
    }
}

/// Pixel-wise loss of predictor heads against targets, summed over heads for the joint task.
pub fn iid_objective(g: &mut Graph, task: TaskKind, heads: &[Var], targets: &[Var]) -> Result<Var> {
    match task {
        TaskKind::Joint => {
            let d = iid_loss(g, TaskKind::Depth, targets[0], heads[0])?.var;
            let n = iid_loss(g, TaskKind::Normal, targets[1], heads[1])?.var;
            g.add(d, n)
        }
        t => Ok(iid_loss(g, t, targets[0], heads[0])?.var),
    }
}

/// Structure-regularization loss of the analyzer's reconstruction heads.
pub fn sr_objective(g: &mut Graph, task: TaskKind, recon: &[Var], targets: &[Var]) -> Result<Var> {
    match task {
        TaskKind::Segmentation => Ok(sr_loss_logits(g, task, targets[0], recon[0])?.var),
        TaskKind::Joint => {
            let d = sr_loss(g, TaskKind::Depth, targets[0], recon[0])?.var;
            let n = sr_loss(g, TaskKind::Normal, targets[1], recon[1])?.var;
            g.add(d, n)
        }
        t => Ok(sr_loss(g, t, targets[0], recon[0])?.var),
    }
}

fn constants(g: &mut Graph, ts: &[Tensor]) -> Result<Vec<Var>> {
    ts.iter().map(|t| g.constant(t)).collect()
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(what, format!("objective is {v}")))
    }
}

/// Gradients into `net`, zero-filled where the loss does not reach, then clip and step.
fn apply_update(
    net: &mut Network,
    g: &Graph,
    loss: Var,
    binding: &crate::nets::Binding,
    opt: &mut OptimizerState,
    step: StepParams,
    what: &str,
) -> Result<f64> {
    let grads = g.backward(loss)?;
    net.zero_grads();
    net.collect_grads(&grads, binding)?;
    let params = net.params_mut();
    params.iter_mut().for_each(Tensor::touch_grad);
    let norm = match step.clip {
        Some(max) => clip_gradients(params, max),
        None => crate::tensor::global_grad_norm(params),
    };
    if !norm.is_finite() {
        net.zero_grads();
        return Err(Error::numeric(what, format!("gradient norm is {norm}")));
    }
    opt.step(net.params_mut(), step.lr)?;
    Ok(norm)
}

/// Current predictions of `predictor` as plain tensors (structured outputs, no tape kept).
pub fn predict_structured(
    predictor: &Network,
    task: TaskKind,
    image: &Tensor,
) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let b = predictor.bind(&mut g, false)?;
    let x = g.constant(image)?;
    let out = predictor.forward(&mut g, &b, &[x], &[])?;
    let ys = structured_outputs(&mut g, task, &out.heads)?;
    Ok(ys.into_iter().map(|v| g.to_tensor(v)).collect())
}

fn tap_refs(taps: &[String]) -> Vec<&str> {
    taps.iter().map(String::as_str).collect()
}

/// The ASM loss of the current networks on a batch, with per-tap loss maps.
pub fn asm_evaluate(
    predictor: &Network,
    analyzer: &Network,
    taps: &[String],
    task: TaskKind,
    batch: &Batch,
) -> Result<LossValue> {
    let preds = predict_structured(predictor, task, &batch.image)?;
    asm_between(analyzer, taps, &preds, &batch.targets)
}

/// The ASM loss between two structured outputs (e.g. a prediction and its target).
pub fn asm_between(
    analyzer: &Network,
    taps: &[String],
    pred: &[Tensor],
    target: &[Tensor],
) -> Result<LossValue> {
    let mut g = Graph::new();
    let a = analyzer.bind(&mut g, false)?;
    let p = constants(&mut g, pred)?;
    let y = constants(&mut g, target)?;
    let t = tap_refs(taps);
    let fp = analyzer.features(&mut g, &a, &p, &t)?;
    let fy = analyzer.features(&mut g, &a, &y, &t)?;
    asm_loss(&mut g, &fp.taps, &fy.taps)
}

/// Finite-difference check of the ASM objective `½‖A(S(x)) − A(y)‖²` with respect to
/// the parameters of both networks (predictor tensors first, then analyzer tensors).
#[allow(clippy::too_many_arguments)]
pub fn asm_grad_check(
    predictor: &Network,
    analyzer: &Network,
    taps: &[String],
    task: TaskKind,
    batch: &Batch,
    step: f64,
    tolerance: f64,
    max_probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let n_s = predictor.params().len();
    let point: Vec<Tensor> = predictor
        .params()
        .iter()
        .chain(analyzer.params())
        .cloned()
        .collect();
    let t = tap_refs(taps);
    grad_check(
        |g, vars| {
            let s = predictor.binding_from(&vars[..n_s])?;
            let a = analyzer.binding_from(&vars[n_s..])?;
            let x = g.constant(&batch.image)?;
            let y = constants(g, &batch.targets)?;
            let out = predictor.forward(g, &s, &[x], &[])?;
            let p = structured_outputs(g, task, &out.heads)?;
            let fp = analyzer.features(g, &a, &p, &t)?;
            let fy = analyzer.features(g, &a, &y, &t)?;
            Ok(asm_loss(g, &fp.taps, &fy.taps)?.var)
        },
        &point,
        step,
        tolerance,
        max_probes,
        seed,
    )
}

/// One analyzer/regularizer update: ascend the ASM term on (possibly binarized) predictions,
/// and move the `λ·SR` reconstruction term in the direction set by `cfg.sr_sign`.
/// Predictor parameters are read but never changed.
#[allow(clippy::too_many_arguments)]
pub fn analyzer_step(
    batch: &Batch,
    predictor: &Network,
    analyzer: &mut Network,
    taps: &[String],
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    step: StepParams,
    counters: &mut StepCounters,
) -> Result<StepStats> {
    let mut preds = predict_structured(predictor, cfg.task, &batch.image)?;
    if cfg.binarize && cfg.task == TaskKind::Segmentation {
        preds[0] = binarize_wta(&preds[0])?;
        counters.binarized_analyzer_passes += 1;
    }
    let mut g = Graph::new();
    let a = analyzer.bind(&mut g, true)?;
    let p = constants(&mut g, &preds)?;
    let y = constants(&mut g, &batch.targets)?;
    let t = tap_refs(taps);
    let lambda = cfg.lambda();
    let fp = analyzer.features(&mut g, &a, &p, &t)?;
    let fy = if lambda > 0.0 {
        analyzer.forward(&mut g, &a, &y, &t)?
    } else {
        analyzer.features(&mut g, &a, &y, &t)?
    };
    let asm = asm_loss(&mut g, &fp.taps, &fy.taps)?;
    let mut loss = g.scale(asm.var, -1.0)?;
    let mut sr = 0.0;
    if lambda > 0.0 {
        let s = sr_objective(&mut g, cfg.task, &fy.heads, &y)?;
        sr = g.scalar(s);
        let weighted = g.scale(s, cfg.sr_sign.coefficient() * lambda)?;
        loss = g.add(loss, weighted)?;
    }
    let value = g.scalar(loss);
    check_finite("analyzer step", value)?;
    let grad_norm = apply_update(analyzer, &g, loss, &a, opt, step, "analyzer step")?;
    counters.record(Phase::Analyzer);
    Ok(StepStats {
        loss: value,
        asm: asm.scalar,
        sr,
        grad_norm,
    })
}

/// One predictor update descending the ASM loss through the frozen analyzer, on soft
/// predictions. `cfg.iid_weight > 0` adds the pixel-wise loss.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step(
    batch: &Batch,
    predictor: &mut Network,
    analyzer: &Network,
    taps: &[String],
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    step: StepParams,
    counters: &mut StepCounters,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let s = predictor.bind(&mut g, true)?;
    let a = analyzer.bind(&mut g, false)?;
    let x = g.constant(&batch.image)?;
    let y = constants(&mut g, &batch.targets)?;
    let out = predictor.forward(&mut g, &s, &[x], &[])?;
    let p = structured_outputs(&mut g, cfg.task, &out.heads)?;
    let t = tap_refs(taps);
    let fp = analyzer.features(&mut g, &a, &p, &t)?;
    let fy = analyzer.features(&mut g, &a, &y, &t)?;
    let asm = asm_loss(&mut g, &fp.taps, &fy.taps)?;
    let mut loss = asm.var;
    if cfg.iid_weight > 0.0 {
        let iid = iid_objective(&mut g, cfg.task, &out.heads, &y)?;
        let w = g.scale(iid, cfg.iid_weight)?;
        loss = g.add(loss, w)?;
    }
    let value = g.scalar(loss);
    check_finite("predictor step", value)?;
    let grad_norm = apply_update(predictor, &g, loss, &s, opt, step, "predictor step")?;
    counters.record(Phase::Predictor);
    Ok(StepStats {
        loss: value,
        asm: asm.scalar,
        sr: 0.0,
        grad_norm,
    })
}

/// One predictor update on the pixel-wise loss alone.
pub fn iid_step(
    batch: &Batch,
    predictor: &mut Network,
    opt: &mut OptimizerState,
    task: TaskKind,
    step: StepParams,
    counters: &mut StepCounters,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let s = predictor.bind(&mut g, true)?;
    let x = g.constant(&batch.image)?;
    let y = constants(&mut g, &batch.targets)?;
    let out = predictor.forward(&mut g, &s, &[x], &[])?;
    let loss = iid_objective(&mut g, task, &out.heads, &y)?;
    let value = g.scalar(loss);
    check_finite("predictor step", value)?;
    let grad_norm = apply_update(predictor, &g, loss, &s, opt, step, "predictor step")?;
    counters.record(Phase::Predictor);
    Ok(StepStats {
        loss: value,
        asm: 0.0,
        sr: 0.0,
        grad_norm,
    })
}

fn disc_input(g: &mut Graph, map: Var, image: Option<Var>) -> Result<Var> {
    match image {
        Some(x) => g.concat_channels(&[map, x]),
        None => Ok(map),
    }
}

/// One discriminator update on real targets versus current (soft) predictions.
/// `conditional` appends the image to both inputs.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step(
    batch: &Batch,
    predictor: &Network,
    disc: &mut Network,
    opt: &mut OptimizerState,
    task: TaskKind,
    conditional: bool,
    step: StepParams,
    counters: &mut StepCounters,
) -> Result<StepStats> {
    let preds = predict_structured(predictor, task, &batch.image)?;
    let mut g = Graph::new();
    let d = disc.bind(&mut g, true)?;
    let x = conditional.then(|| g.constant(&batch.image)).transpose()?;
    let real = g.constant(&batch.targets[0])?;
    let fake = g.constant(&preds[0])?;
    let real_in = disc_input(&mut g, real, x)?;
    let fake_in = disc_input(&mut g, fake, x)?;
    let dr = disc.forward(&mut g, &d, &[real_in], &[])?.heads[0];
    let df = disc.forward(&mut g, &d, &[fake_in], &[])?.heads[0];
    let (d_loss, _) = gan_losses(&mut g, dr, df)?;
    check_finite("discriminator step", d_loss.scalar)?;
    let grad_norm = apply_update(disc, &g, d_loss.var, &d, opt, step, "discriminator step")?;
    counters.record(Phase::Discriminator);
    Ok(StepStats {
        loss: d_loss.scalar,
        asm: d_loss.scalar,
        sr: 0.0,
        grad_norm,
    })
}

/// One generator update: IID loss plus `gamma` times the non-saturating adversarial loss.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    batch: &Batch,
    predictor: &mut Network,
    disc: &Network,
    opt: &mut OptimizerState,
    task: TaskKind,
    conditional: bool,
    gamma: f64,
    step: StepParams,
    counters: &mut StepCounters,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let s = predictor.bind(&mut g, true)?;
    let d = disc.bind(&mut g, false)?;
    let x = g.constant(&batch.image)?;
    let y = constants(&mut g, &batch.targets)?;
    let out = predictor.forward(&mut g, &s, &[x], &[])?;
    let p = structured_outputs(&mut g, task, &out.heads)?;
    let iid = iid_objective(&mut g, task, &out.heads, &y)?;
    let cond = conditional.then_some(x);
    let real_in = disc_input(&mut g, y[0], cond)?;
    let fake_in = disc_input(&mut g, p[0], cond)?;
    let dr = disc.forward(&mut g, &d, &[real_in], &[])?.heads[0];
    let df = disc.forward(&mut g, &d, &[fake_in], &[])?.heads[0];
    let (_, g_loss) = gan_losses(&mut g, dr, df)?;
    let adv = g.scale(g_loss.var, gamma)?;
    let loss = g.add(iid, adv)?;
    let value = g.scalar(loss);
    check_finite("generator step", value)?;
    let grad_norm = apply_update(predictor, &g, loss, &s, opt, step, "generator step")?;
    counters.record(Phase::Generator);
    Ok(StepStats {
        loss: value,
        asm: g_loss.scalar,
        sr: 0.0,
        grad_norm,
    })
}
