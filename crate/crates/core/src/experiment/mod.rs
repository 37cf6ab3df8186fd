//! Scenario orchestration, error metrics and the penetration-rate study.

mod metrics;
mod montecarlo;
mod scenario;
mod shockwave;

pub use metrics::{rmse, smape, Quantiles};
pub use montecarlo::{
    draw_subset, ego_metrics, monte_carlo, subset_size, ErrorReport, MetricSummary, RateReport,
    TrialMetrics,
};
pub use scenario::{
    run_scenario, stream_rng, GroundTruth, Record, ScenarioContext, ScenarioRun, StepRecord,
    ESTIMATE_STREAM, FIRST_TRIAL_STREAM,
};
pub use shockwave::{
    bottleneck_cells, detection, front_non_increasing, front_trace, onset, FrontBlock,
    CONGESTED_VEHKM, DETECTED_VEHKM, FRONT_BLOCK_S, REGION_UPSTREAM_M,
};
