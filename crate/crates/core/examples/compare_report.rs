//! Compares two evaluation reports metric by metric and renders one bar chart.
//!
//! `cargo run --release --example compare_report`

use asmlab::data::GenConfig;
use asmlab::metrics::{compare_reports, evaluate_predictions, Prediction};
use asmlab::training::{predict, Regime, TrainConfig, Trainer};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let gen = GenConfig {
        task: TaskKind::Depth,
        size: 32,
        ..GenConfig::default()
    };
    let train = (0..8)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;
    let val = (50..54)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<_>>>()?;

    let mut cfg = TrainConfig::new(Regime::Iid, TaskKind::Depth);
    cfg.max_iter = 60;
    cfg.width_divisor = 8;
    let mut t = Trainer::new(cfg, train)?;
    while !t.is_done() {
        t.step()?;
    }
    let preds = predict(&t.models().predictor, TaskKind::Depth, &val, 4)?;
    let oracle: Vec<Prediction> = val.iter().map(Prediction::from_target).collect();
    let a = evaluate_predictions("iid", TaskKind::Depth, 13, &val, &preds, "val", 1)?;
    let b = evaluate_predictions("oracle", TaskKind::Depth, 13, &val, &oracle, "val", 1)?;

    let cmp = compare_reports(&a.to_csv(), &b.to_csv())?;
    print!("{}", cmp.to_csv());
    let svg = std::env::temp_dir().join("asmlab-depth-deltas.svg");
    std::fs::write(&svg, cmp.to_svg("depth", "value")).map_err(|e| asmlab::Error::io(&svg, e))?;
    println!("chart: {}", svg.display());
    Ok(())
}
