//! Trains the same predictor under every regime for a few iterations and compares them.
//!
//! `cargo run --release --example baselines`

use asmlab::data::GenConfig;
use asmlab::training::{run_training, Regime, TrainConfig};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let gen = GenConfig {
        task: TaskKind::Segmentation,
        size: 32,
        classes: 4,
        ..GenConfig::default()
    };
    let samples = (0..8)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;
    let root = std::env::temp_dir().join("asmlab-baselines");
    println!(
        "{:<6} {:>10} {:>10} {:>12} {:>12}",
        "regime", "S params", "opp params", "loss_s", "obj_a"
    );
    for regime in [Regime::Iid, Regime::Gan, Regime::Cgan, Regime::Asm] {
        let mut cfg = TrainConfig::new(regime, TaskKind::Segmentation);
        cfg.max_iter = 40;
        cfg.width_divisor = 8;
        let out = run_training(&cfg, &samples, &root.join(regime.as_str()))?;
        let opp = out
            .models
            .analyzer
            .as_ref()
            .or(out.models.discriminator.as_ref());
        let last = out.log.last().expect("max_iter > 0");
        println!(
            "{:<6} {:>10} {:>10} {:>12.5} {:>12.5}",
            regime.as_str(),
            out.models.predictor.num_params(),
            opp.map_or(0, |n| n.num_params()),
            last.loss_s,
            last.obj_a
        );
    }
    Ok(())
}
