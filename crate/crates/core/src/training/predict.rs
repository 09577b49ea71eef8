use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::nets::{argmax_channels, Network};
use crate::task::TaskKind;
use crate::tensor::{Graph, Tensor};

use super::steps::{predict_structured, Batch};

/// Depth predictions are floored here so every metric stays defined.
pub const MIN_DEPTH: f64 = 1e-3;

/// Runs `predictor` over `samples` in batches and converts its outputs to evaluation
/// predictions: argmax classes, floored depth, unit normals.
pub fn predict(
    predictor: &Network,
    task: TaskKind,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let image = crate::data::image_batch(&refs)?;
        let ys = predict_structured(predictor, task, &image)?;
        let (h, w) = chunk[0].size();
        let hw = h * w;
        let classes = match task {
            TaskKind::Segmentation => argmax_channels(&ys[0])?,
            _ => Vec::new(),
        };
        for b in 0..chunk.len() {
            let plane = |t: &Tensor, c: usize| t.data()[b * c * hw..(b + 1) * c * hw].to_vec();
            let depth = |t: &Tensor| plane(t, 1).into_iter().map(|d| d.max(MIN_DEPTH)).collect();
            out.push(match task {
                TaskKind::Segmentation => Prediction::Classes(
                    classes[b * hw..(b + 1) * hw]
                        .iter()
                        .map(|&c| c as u8)
                        .collect(),
                ),
                TaskKind::Depth => Prediction::Depth(depth(&ys[0])),
                TaskKind::Normal => Prediction::Normal(plane(&ys[0], 3)),
                TaskKind::Joint => Prediction::Joint {
                    depth: depth(&ys[0]),
                    normal: plane(&ys[1], 3),
                },
            });
        }
    }
    Ok(out)
}

/// Raw head outputs of `predictor` for one batch.
pub fn predictor_heads(predictor: &Network, batch: &Batch) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let b = predictor.bind(&mut g, false)?;
    let x = g.constant(&batch.image)?;
    let out = predictor.forward(&mut g, &b, &[x], &[])?;
    Ok(out.heads.iter().map(|&v| g.to_tensor(v)).collect())
}
