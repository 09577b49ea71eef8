//! Adversarial structure matching on synthetic depth scenes, stepping the trainer by hand.
//!
//! `cargo run --release --example train_asm -- [iterations]`

use asmlab::data::GenConfig;
use asmlab::training::{Regime, TrainConfig, Trainer};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let iters: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let gen = GenConfig {
        task: TaskKind::Depth,
        size: 32,
        ..GenConfig::default()
    };
    let samples = (0..16)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;

    let mut cfg = TrainConfig::new(Regime::Asm, TaskKind::Depth);
    cfg.max_iter = iters;
    cfg.width_divisor = 8;
    let mut trainer = Trainer::new(cfg, samples)?;
    println!("ASM taps: {}", trainer.models().taps.join(", "));
    while !trainer.is_done() {
        let r = trainer.step()?;
        if r.iter == 1 || r.iter % 25 == 0 {
            println!(
                "iter {:4}  asm(S) {:.5}  objective(A) {:.5}  sr {:.5}  lr_s {:.2e}",
                r.iter, r.loss_s, r.obj_a, r.sr, r.lr_s
            );
        }
    }
    let c = trainer.counters();
    println!(
        "{} analyzer and {} predictor updates",
        c.analyzer_updates, c.predictor_updates
    );
    Ok(())
}
