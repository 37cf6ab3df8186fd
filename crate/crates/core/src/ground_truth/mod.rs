//! Microscopic ground truth: Krauss microsimulation, cell aggregation and
//! boundary-input extraction.

mod fields;
mod microsim;

pub use fields::{aggregate, extract_boundary_input, GroundTruthFields, DEMAND_WINDOW_STEPS};
pub use microsim::{
    krauss_step, run_microsim, safe_speed, spawn_arrivals, Bottleneck, KraussParams, LimitZone,
    RoadGeometry, ScenarioSpec, Snapshot, SpeedLimits, Trajectories, Vehicle, VehicleInfo,
    VehicleSample, LANES,
};
