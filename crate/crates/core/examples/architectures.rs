//! Lists the shipped network templates with parameter counts and activation shapes.
//!
//! `cargo run --example architectures`

use asmlab::nets::{build_network, Template, DEFAULT_WIDTH_DIVISOR};
use asmlab::training::IMAGE_CHANNELS;
use asmlab::TaskKind;

fn main() -> asmlab::Result<()> {
    for t in Template::ALL {
        let full = t.spec();
        let scaled = full.scaled_width(DEFAULT_WIDTH_DIVISOR)?;
        let net = build_network(&scaled, 0)?;
        println!(
            "{:<24} {:>2} layers, {:>9} params at full width, {:>8} at 1/{DEFAULT_WIDTH_DIVISOR}",
            t.name(),
            full.layers.len(),
            build_network(&full, 0)?.num_params(),
            net.num_params()
        );
    }

    let spec = Template::DeskPredictor
        .spec()
        .retarget(TaskKind::Depth, 2, IMAGE_CHANNELS)?;
    println!("\ndesk_predictor (depth) activations at 64x64:");
    for (layer, shape) in spec.layers.iter().zip(spec.infer_shapes(64, 64)?) {
        println!("  {:<10} {:?}", layer.name, shape);
    }
    Ok(())
}
