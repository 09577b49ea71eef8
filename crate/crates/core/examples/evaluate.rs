//! Trains a pixel-wise segmentation baseline briefly and scores it next to the oracle.
//!
//! `cargo run --release --example evaluate`

use asmlab::data::GenConfig;
use asmlab::metrics::{evaluate_predictions, Prediction};
use asmlab::training::{predict, Regime, TrainConfig, Trainer};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let gen = GenConfig {
        task: TaskKind::Segmentation,
        size: 32,
        classes: 4,
        ..GenConfig::default()
    };
    let train = (0..16)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;
    let val = (100..108)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;

    let mut cfg = TrainConfig::new(Regime::Iid, TaskKind::Segmentation);
    cfg.max_iter = 150;
    cfg.width_divisor = 8;
    let mut trainer = Trainer::new(cfg, train)?;
    while !trainer.is_done() {
        trainer.step()?;
    }

    let preds = predict(&trainer.models().predictor, TaskKind::Segmentation, &val, 4)?;
    let model = evaluate_predictions(
        "iid",
        TaskKind::Segmentation,
        4,
        &val,
        &preds,
        "in-memory",
        1,
    )?;
    let oracle: Vec<Prediction> = val.iter().map(Prediction::from_target).collect();
    let truth = evaluate_predictions(
        "oracle",
        TaskKind::Segmentation,
        4,
        &val,
        &oracle,
        "in-memory",
        1,
    )?;
    println!("{}", model.summary_json());
    println!("{}", truth.summary_json());
    if let Some(seg) = &model.seg {
        for (c, iou) in seg.iou.iter().enumerate() {
            println!(
                "class {c}: IoU {}",
                iou.map_or("n/a".into(), |v| format!("{v:.3}"))
            );
        }
    }
    Ok(())
}
