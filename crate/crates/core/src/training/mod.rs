//! The alternating analyzer/predictor loop, IID and GAN baselines, prediction for
//! evaluation, and theory probes.

mod config;
mod models;
mod predict;
mod probe;
mod run;
mod steps;

pub use config::{Regime, SrSign, TrainConfig, AUTO_CLIP_NORM, AUTO_CLIP_THRESHOLD};
pub use models::{
    analyzer_spec, build_models, predictor_spec, target_channels, Models, IMAGE_CHANNELS,
};
pub use predict::{predict, predictor_heads, MIN_DEPTH};
pub use probe::{
    divergence_curve, equilibrium_trace, equivalence_check, linear_analyzer, lr_ratio_sweep,
    strictly_increasing, theory_probe, DivergenceRow, EquilibriumStep, EquivalenceSummary,
    LrRatioRow, TheoryProbeConfig, TheoryReport,
};
pub use run::{run_training, TrainLog, TrainOutcome, TrainRecord, Trainer, LOG_HEADER};
pub use steps::{
    analyzer_step, asm_between, asm_evaluate, asm_grad_check, discriminator_step, generator_step,
    iid_objective, iid_step, predict_structured, predictor_step, sr_objective, structured_outputs,
    Batch, Phase, StepCounters, StepParams, StepStats,
};
