//! Scalar objectives recorded on the tape: the ASM feature-matching loss, structure
//! regularization, pixel-wise IID losses and the non-saturating GAN pair.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{write_pfm, FloatMap};
use crate::error::{Error, Result};
use crate::task::TaskKind;
use crate::tensor::{Graph, Tensor, Var};

/// Weight of the adversarial term in the GAN baselines' generator loss.
pub const DEFAULT_GAN_GAMMA: f64 = 0.01;
/// Floor on vector norms before normalization.
pub const NORM_EPS: f64 = 1e-8;

/// A loss on the tape plus its value and, for ASM, one `[N, H, W]` map per tap.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub var: Var,
    pub scalar: f64,
    pub maps: BTreeMap<String, Tensor>,
}

impl LossValue {
    fn plain(g: &Graph, var: Var) -> Self {
        Self {
            var,
            scalar: g.scalar(var),
            maps: BTreeMap::new(),
        }
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::usage(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Channel-summed squared difference of two `[N, C, H, W]` activations: `[N, H, W]`.
pub fn channel_sq_diff(a: &[f64], b: &[f64], shape: &[usize]) -> Result<Tensor> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut out = vec![0.0; n * hw];
    for bi in 0..n {
        for k in 0..c {
            let base = (bi * c + k) * hw;
            for p in 0..hw {
                out[bi * hw + p] += (a[base + p] - b[base + p]).powi(2);
            }
        }
    }
    Tensor::from_vec(vec![n, h, w], out)
}

/// ½ · mean over every tap element of the squared feature difference.
pub fn asm_loss(
    g: &mut Graph,
    taps_pred: &BTreeMap<String, Var>,
    taps_gt: &BTreeMap<String, Var>,
) -> Result<LossValue> {
    if taps_pred.is_empty() || taps_pred.keys().ne(taps_gt.keys()) {
        return Err(Error::usage(
            "ASM tap maps must share the same nonempty key set",
        ));
    }
    let mut total = None;
    let mut count = 0usize;
    let mut maps = BTreeMap::new();
    for (name, &p) in taps_pred {
        let t = taps_gt[name];
        same_shape(g, p, t, &format!("ASM tap `{name}`"))?;
        let shape = g.shape(p).to_vec();
        if shape.len() != 4 {
            return Err(Error::usage(format!("ASM tap `{name}` must be NCHW")));
        }
        maps.insert(
            name.clone(),
            channel_sq_diff(g.value(p), g.value(t), &shape)?,
        );
        count += shape.iter().product::<usize>();
        let d = g.sub(p, t)?;
        let sq = g.square(d)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let var = g.scale(total.expect("nonempty taps"), 0.5 / count as f64)?;
    Ok(LossValue {
        var,
        scalar: g.scalar(var),
        maps,
    })
}

fn pixels(shape: &[usize]) -> usize {
    shape[0] * shape[2..].iter().product::<usize>()
}

/// Mean over pixels of `-Σ_c y_c log p_c` for probabilities `p` that form a per-pixel simplex.
fn cross_entropy_probs(g: &mut Graph, y: Var, probs: Var) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    let (n, c, hw) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
    let v = g.value(probs);
    for b in 0..n {
        for p in 0..hw {
            let col = (0..c).map(|k| v[(b * c + k) * hw + p]);
            let (mut sum, mut neg) = (0.0, false);
            for x in col {
                sum += x;
                neg |= x < 0.0;
            }
            if neg || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::usage(
                    "segmentation reconstruction must be a per-pixel probability simplex",
                ));
            }
        }
    }
    let lp = g.log(probs)?;
    let m = g.mul(y, lp)?;
    let s = g.sum(m)?;
    g.scale(s, -1.0 / pixels(&shape) as f64)
}

/// Mean over pixels of the softmax cross-entropy of `logits` against one-hot `y`.
pub fn cross_entropy_logits(g: &mut Graph, y: Var, logits: Var) -> Result<Var> {
    same_shape(g, y, logits, "cross-entropy")?;
    let shape = g.shape(logits).to_vec();
    let lp = g.log_softmax_channels(logits)?;
    let m = g.mul(y, lp)?;
    let s = g.sum(m)?;
    g.scale(s, -1.0 / pixels(&shape) as f64)
}

/// Mean over pixels of `‖p̂ − ŷ‖²` between unit-normalized channel vectors.
pub fn normalized_l2(g: &mut Graph, y: Var, pred: Var) -> Result<Var> {
    same_shape(g, y, pred, "normalized L2")?;
    let shape = g.shape(pred).to_vec();
    let pn = g.normalize_channels(pred, NORM_EPS)?;
    let yn = g.normalize_channels(y, NORM_EPS)?;
    let d = g.sub(pn, yn)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / pixels(&shape) as f64)
}

fn mse(g: &mut Graph, y: Var, pred: Var, factor: f64) -> Result<Var> {
    same_shape(g, y, pred, "squared error")?;
    let d = g.sub(pred, y)?;
    let sq = g.square(d)?;
    let m = g.mean(sq)?;
    g.scale(m, factor)
}

fn single_task(task: TaskKind) -> Result<()> {
    if task == TaskKind::Joint {
        return Err(Error::usage(
            "joint losses are evaluated per head (depth and normal)",
        ));
    }
    Ok(())
}

/// Structure-regularization loss between `y` and the reconstruction `R(A_t(y))`.
/// For segmentation `recon` holds per-class probabilities.
pub fn sr_loss(g: &mut Graph, task: TaskKind, y: Var, recon: Var) -> Result<LossValue> {
    single_task(task)?;
    same_shape(g, y, recon, "structure regularization")?;
    let var = match task {
        TaskKind::Segmentation => cross_entropy_probs(g, y, recon)?,
        TaskKind::Depth => mse(g, y, recon, 1.0)?,
        _ => normalized_l2(g, y, recon)?,
    };
    Ok(LossValue::plain(g, var))
}

/// As [`sr_loss`], but segmentation reconstructions are given as logits
/// (the numerically stable form used during training).
pub fn sr_loss_logits(g: &mut Graph, task: TaskKind, y: Var, recon: Var) -> Result<LossValue> {
    if task == TaskKind::Segmentation {
        let var = cross_entropy_logits(g, y, recon)?;
        return Ok(LossValue::plain(g, var));
    }
    sr_loss(g, task, y, recon)
}

/// Pixel-wise loss: softmax cross-entropy on logits, ½-L2 for depth, normalized L2 for normals.
pub fn iid_loss(g: &mut Graph, task: TaskKind, y: Var, pred: Var) -> Result<LossValue> {
    single_task(task)?;
    let var = match task {
        TaskKind::Segmentation => cross_entropy_logits(g, y, pred)?,
        TaskKind::Depth => mse(g, y, pred, 0.5)?,
        _ => normalized_l2(g, y, pred)?,
    };
    Ok(LossValue::plain(g, var))
}

/// Discriminator and non-saturating generator losses from raw logits.
pub fn gan_losses(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<(LossValue, LossValue)> {
    same_shape(g, d_real, d_fake, "GAN logits")?;
    let neg_real = g.scale(d_real, -1.0)?;
    let a = g.softplus(neg_real)?;
    let b = g.softplus(d_fake)?;
    let ab = g.add(a, b)?;
    let d_loss = g.mean(ab)?;
    let neg_fake = g.scale(d_fake, -1.0)?;
    let c = g.softplus(neg_fake)?;
    let g_loss = g.mean(c)?;
    Ok((LossValue::plain(g, d_loss), LossValue::plain(g, g_loss)))
}

/// Writes one PFM per tap map (`<layer>.pfm`, or `<layer>_<n>.pfm` for batches).
pub fn export_loss_maps(loss: &LossValue, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, map) in &loss.maps {
        let (n, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
        for b in 0..n {
            let file = if n == 1 {
                format!("{name}.pfm")
            } else {
                format!("{name}_{b}.pfm")
            };
            let path = out_dir.join(file);
            let fm = FloatMap::new(1, w, h, map.data()[b * h * w..(b + 1) * h * w].to_vec())?;
            write_pfm(&path, &fm)?;
            written.push(path);
        }
    }
    Ok(written)
}
