//! Evaluation measures for segmentation, depth and normals, plus analyzer introspection.

mod boundary;
mod compare;
mod instance;
mod regression;
mod report;
mod segmentation;
mod stimuli;

pub use boundary::{
    boundary_counts, boundary_pixels, boundary_prf, default_tolerance, max_matching,
    BoundaryCounts, BoundaryPrf,
};
pub use compare::{compare_reports, Comparison, DeltaRow};
pub use instance::{instance_aggregate, instance_regions, InstanceAggregate, InstanceRegion};
pub use regression::{
    angle_deg, delta_thresholds, depth_metrics, normal_angles, normal_metrics, summarize_angles,
    DepthAccumulator, DepthMetrics, NormalMetrics, ANGLE_THRESHOLDS, DELTA_EXPONENTS,
};
pub use report::{
    evaluate_predictions, parse_blocks, InstanceSection, MetricsReport, Prediction, SegSection,
};
pub use segmentation::{background_confusion, seg_metrics, ConfusionMatrix, SegMetrics};
pub use stimuli::{receptive_fields, top_stimuli, FieldGeometry, Stimulus, TopStimuli};
