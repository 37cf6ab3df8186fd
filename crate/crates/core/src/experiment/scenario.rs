use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arz::{BoundaryInput, TrafficState};
use crate::comms::{CommGraph, GraphNode, LinkType};
use crate::config::RunConfig;
use crate::dkf::{DkfNetwork, FilterConfig};
use crate::error::{DtseError, Result};
use crate::ground_truth::{
    aggregate, extract_boundary_input, run_microsim, GroundTruthFields, Trajectories,
};
use crate::sensing::{make_measurement, Measurement, NodeId, SensorNode};

/// RNG stream of the single `estimate` run. The microsimulation uses stream 0
/// and Monte Carlo trials start at [`FIRST_TRIAL_STREAM`].
pub const ESTIMATE_STREAM: u64 = 1;
pub const FIRST_TRIAL_STREAM: u64 = 2;

/// Seeded generator for RNG stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Microsimulation output over the analysis window, shared by every run.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub trajectories: Trajectories,
    /// Fields for samples `k0..=k1`.
    pub fields: GroundTruthFields,
    /// Boundary input for samples `k0..=k1`, indexed by `k - k0`.
    pub inputs: Vec<BoundaryInput>,
    pub k0: usize,
    pub k1: usize,
}

impl GroundTruth {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let trajectories = run_microsim(&cfg.scenario(), cfg.dt_s)?;
        Self::from_trajectories(cfg, trajectories)
    }

    pub fn from_trajectories(cfg: &RunConfig, trajectories: Trajectories) -> Result<Self> {
        let p = cfg.model_params();
        let (k0, k1) = cfg.window_steps();
        let fields = aggregate(&trajectories, &p, (k0, k1))?;
        let inputs = (k0..=k1)
            .map(|k| extract_boundary_input(&trajectories, &p, k))
            .collect();
        Ok(Self {
            trajectories,
            fields,
            inputs,
            k0,
            k1,
        })
    }

    pub fn input(&self, k: usize) -> &BoundaryInput {
        &self.inputs[k - self.k0]
    }

    /// First and last window sample at which `id` is inside the study domain.
    pub fn active_interval(&self, id: u64) -> Option<(usize, usize)> {
        let mut steps = (self.k0..=self.k1).filter(|&k| self.trajectories.in_domain(id, k));
        let first = steps.next()?;
        Some((first, steps.next_back().unwrap_or(first)))
    }

    /// Vehicles inside the study domain at some window sample, sorted.
    pub fn vehicle_pool(&self) -> Vec<u64> {
        let domain = self.trajectories.geometry.domain_length();
        let mut pool = BTreeSet::new();
        for k in self.k0..=self.k1 {
            for s in &self.trajectories.snapshots[k].vehicles {
                let x = self.trajectories.geometry.to_domain(s.position);
                if (0.0..domain).contains(&x) {
                    pool.insert(s.id);
                }
            }
        }
        pool.into_iter().collect()
    }

    /// Pool vehicles flagged as connected by the microsimulation.
    pub fn flagged_cvs(&self) -> BTreeSet<u64> {
        self.vehicle_pool()
            .into_iter()
            .filter(|id| self.trajectories.vehicles[id].is_cv)
            .collect()
    }

    /// The reference vehicle: the first to enter the study domain at or after
    /// the window start (lowest id on ties).
    pub fn ego(&self) -> Result<u64> {
        let outside_at_start = |id: u64| !self.trajectories.in_domain(id, self.k0);
        self.vehicle_pool()
            .into_iter()
            .filter(|&id| outside_at_start(id) || self.entered_at(id, self.k0))
            .filter_map(|id| self.active_interval(id).map(|(first, _)| (first, id)))
            .min()
            .map(|(_, id)| id)
            .ok_or_else(|| DtseError::InvalidParameter {
                name: "window_start_s",
                reason: "no vehicle enters the study domain during the analysis window".into(),
            })
    }

    fn entered_at(&self, id: u64, k: usize) -> bool {
        k > 0 && !self.trajectories.in_domain(id, k - 1) && self.trajectories.in_domain(id, k)
    }
}

/// Which node estimates a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    Ego,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(NodeId, NodeId, LinkType)>,
    pub measurements: Vec<Measurement>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub ego: u64,
    /// Projected estimate of each recorded node per sample, in SI units.
    pub estimates: BTreeMap<NodeId, BTreeMap<usize, TrafficState>>,
    /// Graph and measurements per sample; empty unless recording everything.
    pub steps: Vec<StepRecord>,
}

impl ScenarioRun {
    pub fn ego_estimates(&self) -> &BTreeMap<usize, TrafficState> {
        &self.estimates[&NodeId::Cv(self.ego)]
    }
}

/// Fixed part of a run shared across trials.
#[derive(Debug, Clone)]
pub struct ScenarioContext {
    pub filter: FilterConfig,
    pub rsus: Vec<SensorNode>,
    pub range: f64,
    pub cv_noise: nalgebra::Matrix2<f64>,
}

impl ScenarioContext {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let noise = cfg.measurement_noise();
        let mut positions = cfg.rsu_positions_m.clone();
        positions.sort_by(f64::total_cmp);
        Ok(Self {
            filter: cfg.filter_config()?,
            rsus: positions
                .iter()
                .enumerate()
                .map(|(i, &x)| SensorNode::rsu(i, x, noise))
                .collect(),
            range: cfg.v2x_range_m,
            cv_noise: noise,
        })
    }
}

/// Runs every RSU and the CVs in `cvs` (plus `ego`) through the window.
///
/// The estimate recorded at sample `k` is the node's projected prediction for
/// `k`, built from measurements up to `k - 1`. A node entering the domain
/// starts from the configured global prior.
pub fn run_scenario(
    ctx: &ScenarioContext,
    gt: &GroundTruth,
    cvs: &BTreeSet<u64>,
    ego: u64,
    rng: &mut ChaCha8Rng,
    record: Record,
) -> Result<ScenarioRun> {
    let p = ctx.filter.params;
    let traj = &gt.trajectories;
    let mut sensors: Vec<SensorNode> = ctx.rsus.clone();
    sensors.extend(
        cvs.iter()
            .chain(std::iter::once(&ego))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|&id| SensorNode::cv(id, ctx.cv_noise)),
    );

    let mut network = DkfNetwork::new(ctx.filter.clone());
    let mut run = ScenarioRun {
        ego,
        estimates: BTreeMap::new(),
        steps: Vec::new(),
    };
    for k in gt.k0..=gt.k1 {
        let active: Vec<(&SensorNode, f64, usize)> = sensors
            .iter()
            .filter_map(|s| {
                let x = s.position(traj, k)?;
                let cell = crate::sensing::occupied_cell(x, &p)?;
                Some((s, x, cell))
            })
            .collect();
        let ids: BTreeSet<NodeId> = active.iter().map(|(s, _, _)| s.id).collect();
        network.set_active(&ids)?;

        for node in network.nodes() {
            if record == Record::All || node.id == NodeId::Cv(ego) {
                run.estimates
                    .entry(node.id)
                    .or_default()
                    .insert(k, node.estimate.clone());
            }
        }
        if k == gt.k1 {
            break;
        }

        let graph = CommGraph::build(
            active
                .iter()
                .map(|&(s, position, _)| GraphNode { id: s.id, position })
                .collect(),
            ctx.range,
        );
        let measurements: BTreeMap<NodeId, Measurement> = active
            .iter()
            .map(|&(s, _, cell)| (s.id, make_measurement(&gt.fields, s, cell, k, &p, rng)))
            .collect();
        network.step(k, gt.input(k), &measurements, &graph)?;

        if record == Record::All {
            run.steps.push(StepRecord {
                k,
                nodes: graph.nodes.clone(),
                edges: graph
                    .edges
                    .iter()
                    .map(|&(a, b, t)| (graph.nodes[a].id, graph.nodes[b].id, t))
                    .collect(),
                measurements: measurements.into_values().collect(),
            });
        }
    }
    Ok(run)
}
