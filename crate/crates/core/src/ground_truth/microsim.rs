//! Two-lane Krauss car-following microsimulation.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{DtseError, Result};
use crate::units::kmh_to_mps;

pub const LANES: usize = 2;

/// Lane-choice look-ahead at the entry point [m].
const ENTRY_WINDOW: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KraussParams {
    /// Maximum acceleration [m/s^2].
    pub accel: f64,
    /// Comfortable deceleration used by the safe-speed rule [m/s^2].
    pub decel: f64,
    /// Driver imperfection in [0, 1].
    pub sigma: f64,
    /// Reaction time [s].
    pub reaction_time: f64,
    /// Vehicle length [m].
    pub vehicle_length: f64,
    /// Standstill gap between bumpers [m].
    pub min_gap: f64,
    /// Micro step [s].
    pub dt: f64,
}

impl Default for KraussParams {
    fn default() -> Self {
        Self {
            accel: 2.6,
            decel: 4.5,
            sigma: 0.5,
            reaction_time: 1.0,
            vehicle_length: 5.0,
            min_gap: 1.5,
            dt: 0.5,
        }
    }
}

/// Temporary reduced speed limit on a stretch of road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bottleneck {
    /// Start of the zone, measured from the start of the study domain [m].
    pub position: f64,
    /// Zone length [m].
    pub length: f64,
    /// Reduced limit [m/s].
    pub limit: f64,
    /// Activation window [s].
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Total simulated road length including both buffers [m].
    pub total_length: f64,
    /// Length of each boundary buffer [m].
    pub buffer_length: f64,
    /// Simulated time [s].
    pub duration: f64,
    /// Base speed limit [m/s].
    pub speed_limit: f64,
    pub bottleneck: Option<Bottleneck>,
    /// Mean headway of the exponential arrival process [s]; infinite means no demand.
    pub mean_interarrival: f64,
    /// Probability that an arriving vehicle is connected.
    pub cv_penetration: f64,
    pub seed: u64,
    pub krauss: KraussParams,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            total_length: 2700.0,
            buffer_length: 100.0,
            duration: 1200.0,
            speed_limit: kmh_to_mps(100.0),
            bottleneck: Some(Bottleneck {
                position: 2200.0,
                length: 400.0,
                limit: kmh_to_mps(10.0),
                start: 700.0,
                end: 760.0,
            }),
            mean_interarrival: 1.0,
            cv_penetration: 0.1,
            seed: 42,
            krauss: KraussParams::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: String| Err(DtseError::InvalidParameter { name, reason });
        if !(self.total_length > 2.0 * self.buffer_length && self.buffer_length >= 0.0) {
            return invalid(
                "total_length",
                format!(
                    "road of {} m cannot hold two {} m buffers",
                    self.total_length, self.buffer_length
                ),
            );
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return invalid("duration", format!("must be >= 0, got {}", self.duration));
        }
        if !(self.speed_limit > 0.0) {
            return invalid("speed_limit", format!("must be > 0, got {}", self.speed_limit));
        }
        if !(self.mean_interarrival > 0.0) {
            return invalid(
                "mean_interarrival",
                format!("must be > 0, got {}", self.mean_interarrival),
            );
        }
        if !(0.0..=1.0).contains(&self.cv_penetration) {
            return invalid(
                "cv_penetration",
                format!("must lie in [0, 1], got {}", self.cv_penetration),
            );
        }
        if let Some(b) = &self.bottleneck {
            if !(0.0 <= b.start && b.start <= b.end && b.end <= self.duration) {
                return invalid(
                    "bottleneck",
                    format!(
                        "interval [{}, {}] must lie within [0, {}]",
                        b.start, b.end, self.duration
                    ),
                );
            }
            if !(b.limit > 0.0 && b.length > 0.0) {
                return invalid("bottleneck", "limit and length must be > 0".into());
            }
        }
        let k = &self.krauss;
        if !(k.accel > 0.0 && k.decel > 0.0 && k.dt > 0.0 && k.reaction_time > 0.0) {
            return invalid("krauss", "accel, decel, dt and reaction time must be > 0".into());
        }
        if !(0.0..=1.0).contains(&k.sigma) || k.vehicle_length <= 0.0 || k.min_gap < 0.0 {
            return invalid("krauss", "sigma in [0,1], length > 0, min_gap >= 0".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> RoadGeometry {
        RoadGeometry {
            total_length: self.total_length,
            buffer_length: self.buffer_length,
        }
    }

    /// Speed limits in force at time `t`.
    pub fn limits_at(&self, t: f64) -> SpeedLimits {
        let zone = self.bottleneck.and_then(|b| {
            (t >= b.start && t < b.end).then(|| LimitZone {
                start: self.buffer_length + b.position,
                end: self.buffer_length + b.position + b.length,
                limit: b.limit.min(self.speed_limit),
            })
        });
        SpeedLimits {
            base: self.speed_limit,
            zone,
        }
    }
}

/// Road layout: `[0, buffer)` upstream buffer, then the study domain, then the
/// downstream buffer. Positions in trajectories are road coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadGeometry {
    pub total_length: f64,
    pub buffer_length: f64,
}

impl RoadGeometry {
    pub fn domain_start(&self) -> f64 {
        self.buffer_length
    }

    pub fn domain_end(&self) -> f64 {
        self.total_length - self.buffer_length
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_end() - self.domain_start()
    }

    /// Road coordinate to study-domain coordinate.
    pub fn to_domain(&self, road_position: f64) -> f64 {
        road_position - self.buffer_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitZone {
    pub start: f64,
    pub end: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedLimits {
    pub base: f64,
    pub zone: Option<LimitZone>,
}

impl SpeedLimits {
    pub fn uniform(limit: f64) -> Self {
        Self {
            base: limit,
            zone: None,
        }
    }

    pub fn limit_at(&self, position: f64) -> f64 {
        match self.zone {
            Some(z) if position >= z.start && position < z.end => z.limit,
            _ => self.base,
        }
    }

    /// Highest speed that still allows braking down to an upcoming zone limit.
    pub fn max_speed(&self, position: f64, decel: f64) -> f64 {
        let here = self.limit_at(position);
        match self.zone {
            Some(z) if position < z.start => {
                let approach = (z.limit * z.limit + 2.0 * decel * (z.start - position)).sqrt();
                here.min(approach)
            }
            _ => here,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub lane: usize,
    /// Front bumper, road coordinates [m].
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub is_cv: bool,
}

/// Exponential arrival times in `[0, duration)`, sorted.
pub fn spawn_arrivals(mean_headway: f64, duration: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::new();
    if !(mean_headway.is_finite() && mean_headway > 0.0) || duration <= 0.0 {
        return out;
    }
    let exp = Exp::new(1.0 / mean_headway).expect("positive rate");
    let mut t = exp.sample(rng);
    while t < duration {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Krauss safe speed for a follower at speed `v` behind a leader at `v_leader`
/// with bumper gap `gap` (already net of the minimum gap).
pub fn safe_speed(gap: f64, v_leader: f64, v: f64, decel: f64, reaction_time: f64) -> f64 {
    v_leader + (gap - v_leader * reaction_time) / ((v + v_leader) / (2.0 * decel) + reaction_time)
}

/// Advances every lane by one micro step. Each lane must be ordered front to back.
pub fn krauss_step(
    lanes: &mut [Vec<Vehicle>],
    limits: &SpeedLimits,
    params: &KraussParams,
    rng: &mut impl Rng,
) {
    let dt = params.dt;
    for lane in lanes.iter_mut() {
        // (old position, old speed, new position, length) of the vehicle ahead.
        let mut leader: Option<(f64, f64, f64, f64)> = None;
        for veh in lane.iter_mut() {
            let v = veh.speed;
            let mut target = (v + params.accel * dt).min(limits.max_speed(veh.position, params.decel));
            if let Some((pos, speed, _, len)) = leader {
                let gap = pos - len - veh.position - params.min_gap;
                target = target.min(safe_speed(
                    gap,
                    speed,
                    v,
                    params.decel,
                    params.reaction_time,
                ));
            }
            let dawdle = params.sigma * params.accel * dt * rng.random::<f64>();
            let mut next = (target - dawdle).max(0.0);
            if let Some((_, _, new_pos, len)) = leader {
                let room = new_pos - len - params.min_gap - veh.position;
                next = next.min((room / dt).max(0.0));
            }
            leader = Some((veh.position, v, veh.position + next * dt, veh.length));
            veh.position += next * dt;
            veh.speed = next;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSample {
    pub id: u64,
    pub lane: usize,
    pub position: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub t: f64,
    /// Vehicles on the road, sorted by id.
    pub vehicles: Vec<VehicleSample>,
    /// Cumulative number of vehicles inserted so far.
    pub entered: usize,
    /// Cumulative number of vehicles that left the road.
    pub exited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInfo {
    pub is_cv: bool,
    pub length: f64,
}

/// Vehicle states sampled every macroscopic step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub geometry: RoadGeometry,
    /// Sampling interval [s].
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub vehicles: BTreeMap<u64, VehicleInfo>,
}

impl Trajectories {
    pub fn snapshot(&self, k: usize) -> Option<&Snapshot> {
        self.snapshots.get(k)
    }

    pub fn n_samples(&self) -> usize {
        self.snapshots.len()
    }

    /// Domain coordinate of vehicle `id` at sample `k`, if it is on the road.
    pub fn position(&self, id: u64, k: usize) -> Option<f64> {
        let snap = self.snapshots.get(k)?;
        snap.vehicles
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| self.geometry.to_domain(snap.vehicles[i].position))
    }

    /// Whether vehicle `id` is inside the study domain at sample `k`.
    pub fn in_domain(&self, id: u64, k: usize) -> bool {
        self.position(id, k)
            .is_some_and(|x| x >= 0.0 && x < self.geometry.domain_length())
    }
}

/// Runs the scenario and samples every `sample_dt` seconds, starting at t = 0.
pub fn run_microsim(spec: &ScenarioSpec, sample_dt: f64) -> Result<Trajectories> {
    spec.validate()?;
    let params = &spec.krauss;
    let ratio = sample_dt / params.dt;
    if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
        return Err(DtseError::InvalidParameter {
            name: "dt_micro",
            reason: format!(
                "sampling interval {sample_dt} s must be a whole multiple of the micro step {} s",
                params.dt
            ),
        });
    }
    let substeps = ratio.round() as usize;
    let n_samples = (spec.duration / sample_dt).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let arrivals = spawn_arrivals(spec.mean_interarrival, spec.duration, &mut rng);
    let mut vehicles = BTreeMap::new();
    let mut pending: VecDeque<(u64, f64)> = VecDeque::new();
    for (i, &t) in arrivals.iter().enumerate() {
        let is_cv = rng.random::<f64>() < spec.cv_penetration;
        vehicles.insert(
            i as u64,
            VehicleInfo {
                is_cv,
                length: params.vehicle_length,
            },
        );
        pending.push_back((i as u64, t));
    }

    let mut lanes: Vec<Vec<Vehicle>> = vec![Vec::new(); LANES];
    let mut entered = 0usize;
    let mut exited = 0usize;
    let mut snapshots = Vec::with_capacity(n_samples + 1);
    snapshots.push(take_snapshot(0, 0.0, &lanes, entered, exited));

    let mut t = 0.0;
    for k in 1..=n_samples {
        for _ in 0..substeps {
            let limits = spec.limits_at(t);
            krauss_step(&mut lanes, &limits, params, &mut rng);
            t += params.dt;
            for lane in lanes.iter_mut() {
                let before = lane.len();
                lane.retain(|v| v.position < spec.total_length);
                exited += before - lane.len();
            }
            let limits = spec.limits_at(t);
            while let Some(&(id, arrival)) = pending.front() {
                if arrival > t {
                    break;
                }
                let info = vehicles[&id];
                if !try_insert(&mut lanes, id, info, &limits, params) {
                    break;
                }
                pending.pop_front();
                entered += 1;
            }
        }
        snapshots.push(take_snapshot(k, k as f64 * sample_dt, &lanes, entered, exited));
    }

    Ok(Trajectories {
        geometry: spec.geometry(),
        dt: sample_dt,
        snapshots,
        vehicles,
    })
}

/// Inserts a vehicle at road position 0 in the less occupied lane (ties go
/// to lane 0), falling back to the other lane if the first is blocked.
fn try_insert(
    lanes: &mut [Vec<Vehicle>],
    id: u64,
    info: VehicleInfo,
    limits: &SpeedLimits,
    params: &KraussParams,
) -> bool {
    let occupancy = |lane: &Vec<Vehicle>| lane.iter().filter(|v| v.position < ENTRY_WINDOW).count();
    let preferred = if occupancy(&lanes[1]) < occupancy(&lanes[0]) { 1 } else { 0 };
    for lane_idx in [preferred, 1 - preferred] {
        let lane = &mut lanes[lane_idx];
        let mut speed = limits.max_speed(0.0, params.decel);
        if let Some(last) = lane.last() {
            let gap = last.position - last.length - params.min_gap;
            if gap < 0.0 {
                continue;
            }
            let safe = safe_speed(gap, last.speed, speed, params.decel, params.reaction_time);
            speed = speed.min(safe).min(gap / params.dt).max(0.0);
        }
        lane.push(Vehicle {
            id,
            lane: lane_idx,
            position: 0.0,
            speed,
            length: info.length,
            is_cv: info.is_cv,
        });
        return true;
    }
    false
}

fn take_snapshot(
    k: usize,
    t: f64,
    lanes: &[Vec<Vehicle>],
    entered: usize,
    exited: usize,
) -> Snapshot {
    let mut vehicles: Vec<VehicleSample> = lanes
        .iter()
        .flatten()
        .map(|v| VehicleSample {
            id: v.id,
            lane: v.lane,
            position: v.position,
            speed: v.speed,
        })
        .collect();
    vehicles.sort_by_key(|v| v.id);
    Snapshot {
        k,
        t,
        vehicles,
        entered,
        exited,
    }
}
