//! CSV and JSON artifacts. Cells are numbered from 1 and quantities are in
//! reporting units (veh/km, veh/h, km/h) unless a column name says otherwise.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::arz::TrafficState;
use crate::error::{DtseError, Result};
use crate::experiment::{ErrorReport, GroundTruth, ScenarioRun};
use crate::ground_truth::{GroundTruthFields, Trajectories};
use crate::sensing::NodeId;
use crate::units::{mps_to_kmh, vehm_to_vehkm, vehs_to_vehh};

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const FIELDS: &str = "fields.csv";
pub const MEASUREMENTS: &str = "measurements.csv";
pub const GRAPH_NODES: &str = "graph_nodes.csv";
pub const GRAPH_EDGES: &str = "graph_edges.csv";
pub const STUDY: &str = "study.csv";
pub const SUMMARY: &str = "summary.json";
pub const TRUTH_HEATMAP: &str = "heatmap_truth_rho.csv";
pub const EGO_HEATMAP: &str = "heatmap_ego_rho.csv";
pub const EGO_TRAJECTORY: &str = "ego_trajectory.csv";

/// File name of the estimate log of `node`.
pub fn estimates_file(node: NodeId) -> String {
    format!("estimates_{node}.csv")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| DtseError::csv(path, e))
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| DtseError::csv(path, e))?;
    }
    w.flush().map_err(|e| DtseError::io(path, e))
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    vehicle_id: u64,
    lane: usize,
    /// Study-domain coordinate; negative inside the upstream buffer.
    position_m: f64,
    speed_mps: f64,
    is_cv: bool,
}

pub fn write_trajectories(path: &Path, traj: &Trajectories) -> Result<()> {
    write_rows(
        path,
        traj.snapshots.iter().flat_map(|snap| {
            snap.vehicles.iter().map(move |v| TrajectoryRow {
                t: snap.t,
                vehicle_id: v.id,
                lane: v.lane,
                position_m: traj.geometry.to_domain(v.position),
                speed_mps: v.speed,
                is_cv: traj.vehicles[&v.id].is_cv,
            })
        }),
    )
}

#[derive(Serialize)]
struct FieldRow {
    k: usize,
    cell: usize,
    rho_vehkm: f64,
    v_kmh: f64,
    psi_vehh: f64,
}

pub fn write_fields(path: &Path, fields: &GroundTruthFields) -> Result<()> {
    write_rows(
        path,
        (0..fields.n_steps()).flat_map(|r| {
            (0..fields.rho[r].len()).map(move |i| FieldRow {
                k: fields.k0 + r,
                cell: i + 1,
                rho_vehkm: vehm_to_vehkm(fields.rho[r][i]),
                v_kmh: mps_to_kmh(fields.v[r][i]),
                psi_vehh: vehs_to_vehh(fields.psi[r][i]),
            })
        }),
    )
}

#[derive(Serialize)]
struct MeasurementRow {
    k: usize,
    sensor_id: String,
    kind: String,
    cell: usize,
    rho_meas: f64,
    psi_meas: f64,
}

/// Measurement log of a run recorded with [`crate::experiment::Record::All`].
pub fn write_measurements(path: &Path, run: &ScenarioRun) -> Result<()> {
    write_rows(
        path,
        run.steps.iter().flat_map(|s| {
            s.measurements.iter().map(|m| MeasurementRow {
                k: m.k,
                sensor_id: m.sensor.to_string(),
                kind: m.sensor.kind().to_string(),
                cell: m.cell + 1,
                rho_meas: vehm_to_vehkm(m.y[0]),
                psi_meas: vehs_to_vehh(m.y[1]),
            })
        }),
    )
}

#[derive(Serialize)]
struct EstimateRow {
    k: usize,
    node_id: String,
    cell: usize,
    rho_est_vehkm: f64,
    psi_est_vehh: f64,
}

fn write_estimate_log(path: &Path, node: NodeId, log: &BTreeMap<usize, TrafficState>) -> Result<()> {
    let id = node.to_string();
    write_rows(
        path,
        log.iter().flat_map(|(&k, x)| {
            let id = id.clone();
            (0..x.n_cells()).map(move |i| EstimateRow {
                k,
                node_id: id.clone(),
                cell: i + 1,
                rho_est_vehkm: vehm_to_vehkm(x.rho(i)),
                psi_est_vehh: vehs_to_vehh(x.psi(i)),
            })
        }),
    )
}

/// One `estimates_<node>.csv` per recorded node. Returns the files written.
pub fn write_estimates(dir: &Path, run: &ScenarioRun) -> Result<Vec<PathBuf>> {
    run.estimates
        .iter()
        .map(|(&node, log)| {
            let path = dir.join(estimates_file(node));
            write_estimate_log(&path, node, log)?;
            Ok(path)
        })
        .collect()
}

#[derive(Serialize)]
struct NodeRow {
    k: usize,
    node_id: String,
    kind: String,
    position_m: f64,
}

#[derive(Serialize)]
struct EdgeRow {
    k: usize,
    node_a: String,
    node_b: String,
    link_type: String,
}

pub fn write_graph(nodes_path: &Path, edges_path: &Path, run: &ScenarioRun) -> Result<()> {
    write_rows(
        nodes_path,
        run.steps.iter().flat_map(|s| {
            s.nodes.iter().map(|n| NodeRow {
                k: s.k,
                node_id: n.id.to_string(),
                kind: n.id.kind().to_string(),
                position_m: n.position,
            })
        }),
    )?;
    write_rows(
        edges_path,
        run.steps.iter().flat_map(|s| {
            s.edges.iter().map(|(a, b, t)| EdgeRow {
                k: s.k,
                node_a: a.to_string(),
                node_b: b.to_string(),
                link_type: t.to_string(),
            })
        }),
    )
}

/// Density matrix with one row per sample: `k, c1, ..., cN`.
pub fn write_heatmap<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (usize, &'a TrafficState)>,
) -> Result<()> {
    let mut w = writer(path)?;
    let mut header_done = false;
    for (k, x) in rows {
        if !header_done {
            let header = std::iter::once("k".to_string())
                .chain((1..=x.n_cells()).map(|i| format!("c{i}")));
            w.write_record(header).map_err(|e| DtseError::csv(path, e))?;
            header_done = true;
        }
        let record = std::iter::once(k.to_string())
            .chain((0..x.n_cells()).map(|i| vehm_to_vehkm(x.rho(i)).to_string()));
        w.write_record(record).map_err(|e| DtseError::csv(path, e))?;
    }
    w.flush().map_err(|e| DtseError::io(path, e))
}

pub fn write_truth_heatmap(path: &Path, gt: &GroundTruth) -> Result<()> {
    let states: Vec<(usize, TrafficState)> =
        (gt.k0..=gt.k1).map(|k| (k, gt.fields.state(k))).collect();
    write_heatmap(path, states.iter().map(|(k, x)| (*k, x)))
}

#[derive(Serialize)]
struct EgoRow {
    k: usize,
    t: f64,
    position_m: f64,
    cell: usize,
}

/// Ego positions over the samples at which it is inside the study domain.
pub fn write_ego_trajectory(path: &Path, gt: &GroundTruth, ego: u64, dh: f64) -> Result<()> {
    let traj = &gt.trajectories;
    write_rows(
        path,
        (gt.k0..=gt.k1)
            .filter(|&k| traj.in_domain(ego, k))
            .filter_map(|k| {
                let x = traj.position(ego, k)?;
                Some(EgoRow {
                    k,
                    t: traj.snapshots[k].t,
                    position_m: x,
                    cell: (x / dh).floor() as usize + 1,
                })
            }),
    )
}

pub fn write_study(path: &Path, report: &ErrorReport) -> Result<()> {
    write_rows(path, report.rates.iter().flat_map(|r| r.trials.iter()))
}

pub fn write_summary(path: &Path, report: &ErrorReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| DtseError::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| DtseError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| DtseError::io(path, e))
}
