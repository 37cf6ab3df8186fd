//! Roadside units (RSUs) and connected vehicles (CVs) as single-cell sensors.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::arz::ModelParams;
use crate::error::{DtseError, Result};
use crate::ground_truth::{GroundTruthFields, Trajectories};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    /// Index into the RSU list, ordered by position.
    Rsu(usize),
    /// Vehicle id from the microsimulation.
    Cv(u64),
}

impl NodeId {
    pub fn kind(&self) -> SensorKind {
        match self {
            NodeId::Rsu(_) => SensorKind::Rsu,
            NodeId::Cv(_) => SensorKind::Cv,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Rsu(i) => write!(f, "rsu{i}"),
            NodeId::Cv(id) => write!(f, "cv{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SensorKind {
    Rsu,
    Cv,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Rsu => "RSU",
            SensorKind::Cv => "CV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    /// Fixed position in study-domain coordinates [m].
    Fixed { position: f64 },
    /// Follows a vehicle of the microsimulation.
    Vehicle { id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNode {
    pub id: NodeId,
    pub anchor: Anchor,
    /// Measurement noise covariance, SI units.
    pub noise: Matrix2<f64>,
}

impl SensorNode {
    pub fn rsu(index: usize, position: f64, noise: Matrix2<f64>) -> Self {
        Self {
            id: NodeId::Rsu(index),
            anchor: Anchor::Fixed { position },
            noise,
        }
    }

    pub fn cv(vehicle: u64, noise: Matrix2<f64>) -> Self {
        Self {
            id: NodeId::Cv(vehicle),
            anchor: Anchor::Vehicle { id: vehicle },
            noise,
        }
    }

    pub fn kind(&self) -> SensorKind {
        self.id.kind()
    }

    /// Study-domain position at sample `k`; `None` when a CV is off the road.
    pub fn position(&self, traj: &Trajectories, k: usize) -> Option<f64> {
        match self.anchor {
            Anchor::Fixed { position } => Some(position),
            Anchor::Vehicle { id } => traj.position(id, k),
        }
    }

    /// Occupied cell at sample `k`, or `None` when the sensor is outside the domain.
    pub fn occupied_cell(&self, traj: &Trajectories, p: &ModelParams, k: usize) -> Option<usize> {
        self.position(traj, k).and_then(|x| occupied_cell(x, p))
    }
}

/// 0-based cell containing study-domain position `position`; cells are
/// left-closed, so `position = 0` is cell 0 and the domain end is outside.
pub fn occupied_cell(position: f64, p: &ModelParams) -> Option<usize> {
    if !(position >= 0.0 && position < p.domain_length()) {
        return None;
    }
    Some(((position / p.dh).floor() as usize).min(p.n_cells - 1))
}

/// The selector `e_cell^T ⊗ I_2`, stored by its cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementMatrix {
    cell: usize,
    n_cells: usize,
}

pub fn measurement_matrix(cell: usize, n_cells: usize) -> Result<MeasurementMatrix> {
    if cell >= n_cells {
        return Err(DtseError::CellOutOfRange { cell, n_cells });
    }
    Ok(MeasurementMatrix { cell, n_cells })
}

impl MeasurementMatrix {
    pub fn cell(&self) -> usize {
        self.cell
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(2, 2 * self.n_cells);
        c[(0, 2 * self.cell)] = 1.0;
        c[(1, 2 * self.cell + 1)] = 1.0;
        c
    }

    pub fn apply(&self, x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(x[2 * self.cell], x[2 * self.cell + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// `(rho, psi)` in SI units.
    pub y: Vector2<f64>,
    pub cell: usize,
    pub sensor: NodeId,
    pub k: usize,
    /// Noise covariance of `y`, SI units.
    pub noise: Matrix2<f64>,
}

/// Noisy reading of the true `(rho, psi)` of `cell` at sample `k`, clamped to
/// the physical box afterwards.
pub fn make_measurement(
    fields: &GroundTruthFields,
    sensor: &SensorNode,
    cell: usize,
    k: usize,
    p: &ModelParams,
    rng: &mut impl Rng,
) -> Measurement {
    let truth = fields.cell(k, cell);
    let l = psd_cholesky(&sensor.noise);
    let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    let y = Vector2::new(truth.rho, truth.psi) + l * z;
    Measurement {
        y: Vector2::new(y[0].clamp(0.0, p.rho_m), y[1].clamp(0.0, p.psi_max())),
        cell,
        sensor: sensor.id,
        k,
        noise: sensor.noise,
    }
}

/// Lower Cholesky factor of a 2x2 symmetric positive semidefinite matrix.
fn psd_cholesky(r: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = r[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { r[(1, 0)] / l11 } else { 0.0 };
    let l22 = (r[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}
