//! Aggregation of microscopic trajectories into per-cell macroscopic fields
//! and extraction of the boundary input.

use crate::arz::{BoundaryInput, CellState, ModelParams, TrafficState};
use crate::error::{DtseError, Result};

use super::microsim::Trajectories;

/// Trailing window used to turn entry counts into an upstream demand rate.
pub const DEMAND_WINDOW_STEPS: usize = 10;

/// Macroscopic fields for samples `k0..k0 + n_steps`, indexed `[step][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFields {
    pub k0: usize,
    /// Density of both lanes combined [veh/m].
    pub rho: Vec<Vec<f64>>,
    /// Mean speed of the vehicles in the cell; `v_f` for empty cells [m/s].
    pub v: Vec<Vec<f64>>,
    /// Relative flow `rho (v + p(rho))` [veh/s].
    pub psi: Vec<Vec<f64>>,
}

impl GroundTruthFields {
    pub fn n_steps(&self) -> usize {
        self.rho.len()
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.k0 && k < self.k0 + self.n_steps()
    }

    pub fn cell(&self, k: usize, cell: usize) -> CellState {
        let r = k - self.k0;
        CellState::new(self.rho[r][cell], self.psi[r][cell])
    }

    pub fn state(&self, k: usize) -> TrafficState {
        let r = k - self.k0;
        let cells: Vec<CellState> = self.rho[r]
            .iter()
            .zip(&self.psi[r])
            .map(|(&rho, &psi)| CellState::new(rho, psi))
            .collect();
        TrafficState::from_cells(&cells)
    }
}

/// Aggregates samples `window.0..=window.1` of `traj` into cell fields.
pub fn aggregate(
    traj: &Trajectories,
    p: &ModelParams,
    window: (usize, usize),
) -> Result<GroundTruthFields> {
    let (k0, k1) = window;
    if k0 > k1 || k1 >= traj.n_samples() {
        return Err(DtseError::Shape(format!(
            "window [{k0}, {k1}] not covered by {} samples",
            traj.n_samples()
        )));
    }
    let domain = traj.geometry.domain_length();
    if (domain - p.domain_length()).abs() > 1e-6 {
        return Err(DtseError::Shape(format!(
            "study domain is {domain} m but the model grid covers {} m",
            p.domain_length()
        )));
    }
    let n = p.n_cells;
    let mut fields = GroundTruthFields {
        k0,
        rho: Vec::with_capacity(k1 - k0 + 1),
        v: Vec::with_capacity(k1 - k0 + 1),
        psi: Vec::with_capacity(k1 - k0 + 1),
    };
    for k in k0..=k1 {
        let mut count = vec![0usize; n];
        let mut speed_sum = vec![0.0; n];
        for s in &traj.snapshots[k].vehicles {
            let x = traj.geometry.to_domain(s.position);
            if x < 0.0 || x >= domain {
                continue;
            }
            let cell = ((x / p.dh).floor() as usize).min(n - 1);
            count[cell] += 1;
            speed_sum[cell] += s.speed;
        }
        let rho: Vec<f64> = count.iter().map(|&c| c as f64 / p.dh).collect();
        let v: Vec<f64> = count
            .iter()
            .zip(&speed_sum)
            .map(|(&c, &sum)| if c == 0 { p.v_f } else { sum / c as f64 })
            .collect();
        let psi = rho
            .iter()
            .zip(&v)
            .map(|(&r, &v)| CellState::from_speed(r, v, p).psi)
            .collect();
        fields.rho.push(rho);
        fields.v.push(v);
        fields.psi.push(psi);
    }
    Ok(fields)
}

/// Boundary input at sample `k`, as measured in the two buffers.
///
/// * `demand_up`: vehicles crossing into the study domain over the trailing
///   [`DEMAND_WINDOW_STEPS`] samples divided by the elapsed time.
/// * `chi_up`: mean speed of those entering vehicles plus the pressure of the
///   upstream buffer density. Falls back to the buffer's mean speed, then `v_f`.
/// * `rho_down`: density of the downstream buffer, clamped to `rho_m`.
pub fn extract_boundary_input(traj: &Trajectories, p: &ModelParams, k: usize) -> BoundaryInput {
    let g = traj.geometry;
    let edge = g.domain_start();
    let first = k.saturating_sub(DEMAND_WINDOW_STEPS - 1).max(1);

    let mut crossings = 0usize;
    let mut crossing_speed = 0.0;
    if k >= 1 {
        for j in first..=k {
            let prev = &traj.snapshots[j - 1].vehicles;
            for s in &traj.snapshots[j].vehicles {
                if s.position < edge {
                    continue;
                }
                let before = prev
                    .binary_search_by_key(&s.id, |v| v.id)
                    .ok()
                    .map(|i| prev[i].position);
                if before.is_none_or(|b| b < edge) {
                    crossings += 1;
                    crossing_speed += s.speed;
                }
            }
        }
    }
    let elapsed = if k >= 1 {
        (k - first + 1) as f64 * traj.dt
    } else {
        0.0
    };
    let demand_up = if elapsed > 0.0 {
        crossings as f64 / elapsed
    } else {
        0.0
    };

    let now = &traj.snapshots[k].vehicles;
    let up_buffer: Vec<f64> = now
        .iter()
        .filter(|s| s.position < edge)
        .map(|s| s.speed)
        .collect();
    let rho_up_buffer = up_buffer.len() as f64 / g.buffer_length;
    let entering_speed = if crossings > 0 {
        crossing_speed / crossings as f64
    } else if !up_buffer.is_empty() {
        up_buffer.iter().sum::<f64>() / up_buffer.len() as f64
    } else {
        p.v_f
    };
    let chi_up = entering_speed + p.pressure(rho_up_buffer).unwrap_or(0.0);

    let down_count = now
        .iter()
        .filter(|s| s.position >= g.domain_end() && s.position < g.total_length)
        .count();
    let rho_down = (down_count as f64 / g.buffer_length).min(p.rho_m);

    BoundaryInput {
        demand_up,
        chi_up,
        rho_down,
    }
}
