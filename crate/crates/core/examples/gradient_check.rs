//! Finite-difference checks of tape gradients: a few primitives, then the full ASM
//! objective through predictor and analyzer.
//!
//! `cargo run --release --example gradient_check`

use asmlab::data::GenConfig;
use asmlab::tensor::{grad_check, Padding, Tensor};
use asmlab::training::{asm_grad_check, build_models, Batch, Regime, TrainConfig};
use asmlab::TaskKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> asmlab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(vec![1, 3, 6, 6], 1.0, &mut rng);
    let w = Tensor::randn(vec![2, 3, 3, 3], 0.5, &mut rng);
    let b = Tensor::randn(vec![2], 0.1, &mut rng);
    let conv = grad_check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same)?;
            let s = g.softmax_channels(y)?;
            let q = g.square(s)?;
            g.sum(q)
        },
        &[x.clone(), w, b],
        1e-6,
        1e-5,
        20,
        0,
    )?;
    println!(
        "conv2d + softmax: max rel error {:.2e} ({} probes)",
        conv.max_rel_error, conv.probes
    );
    let norm = grad_check(
        |g, v| {
            let n = g.normalize_channels(v[0], 1e-8)?;
            let u = g.bilinear_upsample(n, 2)?;
            g.mean(u)
        },
        &[x],
        1e-6,
        1e-5,
        20,
        0,
    )?;
    println!(
        "normalize + upsample: max rel error {:.2e}",
        norm.max_rel_error
    );

    for task in [TaskKind::Segmentation, TaskKind::Depth, TaskKind::Normal] {
        let mut cfg = TrainConfig::new(Regime::Asm, task);
        cfg.width_divisor = 16;
        let mut m = build_models(&cfg)?;
        // Nonzero biases keep flat image regions off the ReLU kink.
        for net in [
            &mut m.predictor,
            m.analyzer.as_mut().expect("asm builds an analyzer"),
        ] {
            for p in net.params_mut().iter_mut().filter(|p| p.shape().len() == 1) {
                p.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.1..0.1));
            }
        }
        let sample = GenConfig {
            task,
            size: 16,
            ..GenConfig::default()
        }
        .sample(0)?;
        let batch = Batch::from_samples(&[&sample], task, cfg.classes)?;
        let analyzer = m.analyzer.as_ref().expect("asm builds an analyzer");
        let r = asm_grad_check(
            &m.predictor,
            analyzer,
            &m.taps,
            task,
            &batch,
            1e-6,
            1e-5,
            3,
            7,
        )?;
        println!(
            "ASM objective ({task}): max rel error {:.2e} over {} probes, {}",
            r.max_rel_error,
            r.probes,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
