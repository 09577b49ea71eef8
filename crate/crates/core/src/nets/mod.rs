//! Declarative encoder-decoder networks: predictor, analyzer (with its
//! reconstruction heads) and GAN discriminator.

mod checkpoint;
mod network;
mod spec;
mod templates;

pub use checkpoint::{
    deserialize_network, load_network, save_network, serialize_network, CHECKPOINT_MAGIC,
};
pub use network::{build_network, forward_with_taps, Binding, ForwardOutput, Network};
pub use spec::{ActShape, HeadRole, HeadSpec, InputSpec, LayerSpec, NetRole, NetworkSpec};
pub use templates::{load_template, Template, DEFAULT_WIDTH_DIVISOR};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Winner-take-all one-hot projection over channels; ties go to the lowest channel.
pub fn binarize_wta(prediction: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = prediction.dims4()?;
    if c < 2 {
        return Err(Error::usage(
            "winner-take-all binarization needs a multi-channel segmentation output",
        ));
    }
    let hw = h * w;
    let src = prediction.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if src[base + k * hw + p] > src[base + best * hw + p] {
                    best = k;
                }
            }
            out[base + best * hw + p] = 1.0;
        }
    }
    Tensor::from_vec(prediction.shape().to_vec(), out)
}

/// Per-pixel argmax over channels of an `N x C x H x W` tensor (lowest index on ties).
pub fn argmax_channels(t: &Tensor) -> Result<Vec<usize>> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let d = t.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if d[b * c * hw + k * hw + p] > d[b * c * hw + best * hw + p] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}
