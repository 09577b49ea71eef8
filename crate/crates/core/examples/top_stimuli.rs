//! Finds the target patches that most excite one analyzer filter and saves a montage.
//!
//! `cargo run --release --example top_stimuli -- [layer] [filter]`

use asmlab::data::{target_batch, write_pgm, GenConfig, Sample};
use asmlab::metrics::top_stimuli;
use asmlab::training::{build_models, Regime, TrainConfig};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let layer = args.next().unwrap_or_else(|| "conv2".into());
    let filter: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let gen = GenConfig {
        task: TaskKind::Segmentation,
        size: 32,
        classes: 2,
        ..GenConfig::default()
    };
    let samples = (0..12)
        .map(|i| gen.sample(i))
        .collect::<asmlab::Result<Vec<Sample>>>()?;
    let mut cfg = TrainConfig::new(Regime::Asm, TaskKind::Segmentation);
    cfg.classes = 2;
    let analyzer = build_models(&cfg)?
        .analyzer
        .expect("asm builds an analyzer");

    let mut inputs = Vec::new();
    for chunk in samples.chunks(4) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        inputs.push(target_batch(&refs, TaskKind::Segmentation, 2)?);
    }
    let top = top_stimuli(&analyzer, &inputs, &layer, filter, 8)?;
    print!("{}", top.to_csv());
    let path = std::env::temp_dir().join("asmlab-top-stimuli.pgm");
    write_pgm(&path, &top.montage()?)?;
    println!(
        "{}x{} patches, montage at {}",
        top.patch_size,
        top.patch_size,
        path.display()
    );
    Ok(())
}
