//! Per-tap ASM loss maps between an untrained predictor's output and the ground truth,
//! written as PFM images.
//!
//! `cargo run --release --example loss_maps -- [out_dir]`

use std::path::PathBuf;

use asmlab::data::GenConfig;
use asmlab::losses::export_loss_maps;
use asmlab::training::{asm_evaluate, build_models, Batch, Regime, TrainConfig};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("target/example-loss-maps"), PathBuf::from);
    let gen = GenConfig {
        task: TaskKind::Normal,
        size: 32,
        ..GenConfig::default()
    };
    let sample = gen.sample(0)?;
    let cfg = TrainConfig::new(Regime::Asm, TaskKind::Normal);
    let models = build_models(&cfg)?;
    let analyzer = models.analyzer.as_ref().expect("asm builds an analyzer");
    let batch = Batch::from_samples(&[&sample], TaskKind::Normal, cfg.classes)?;
    let loss = asm_evaluate(
        &models.predictor,
        analyzer,
        &models.taps,
        TaskKind::Normal,
        &batch,
    )?;
    println!("ASM value {:.6}", loss.scalar);
    std::fs::create_dir_all(&out).map_err(|e| asmlab::Error::io(&out, e))?;
    for f in export_loss_maps(&loss, &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
