//! Numerical probes of the minimax game: divergence of a linear analyzer, the zero-value
//! equivalence, oracle equilibrium and learning-rate ratio stability.
//!
//! `cargo run --release --example theory_probe`

use asmlab::training::{theory_probe, TheoryProbeConfig};

fn main() -> asmlab::Result<()> {
    let report = theory_probe(&TheoryProbeConfig::default())?;
    println!(
        "divergence strictly increasing in |w|: {}",
        report.divergence_increasing()
    );
    for r in report
        .divergence
        .iter()
        .filter(|r| r.epsilon == 1.0)
        .step_by(4)
    {
        println!("  eps 1, w {:>9}: value {:.4e}", r.w, r.value);
    }
    let e = &report.equivalence;
    println!(
        "zero value <=> identical prediction: {}/{} cases agree",
        e.agreements, e.cases
    );
    println!(
        "oracle equilibrium: max |value| over {} ascent steps = {:e}",
        report.equilibrium.len(),
        report.equilibrium_max()
    );
    for r in &report.lr_sweep {
        println!(
            "  lr_a/lr_s = {:<5} diverged in {:5.1}% of runs",
            r.ratio,
            100.0 * r.frequency()
        );
    }
    Ok(())
}
