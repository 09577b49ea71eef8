//! Renders a small segmentation dataset to disk and prints its manifests.
//!
//! `cargo run --example gen_data -- [out_dir]`

use std::path::PathBuf;

use asmlab::data::{generate_dataset, GenConfig};
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("target/example-data"), PathBuf::from);
    for task in [TaskKind::Segmentation, TaskKind::Depth] {
        let cfg = GenConfig {
            task,
            n_train: 16,
            n_val: 4,
            size: 32,
            ..GenConfig::default()
        };
        let set = generate_dataset(&cfg, &dir.join(task.to_string()))?;
        println!(
            "{task}: {} train / {} val samples",
            set.train.len(),
            set.val.len()
        );
        println!("  train manifest {}", set.train_path.display());
        println!("  checksum {}", set.checksum()?);
        let first = set.train.load_sample(0)?;
        println!(
            "  first sample {} is {}x{}",
            first.id,
            first.size().0,
            first.size().1
        );
    }
    Ok(())
}
