#![allow(dead_code)]

use dtse::arz::{BoundaryInput, CellState, ModelParams, TrafficState};
use dtse::comms::{CommGraph, GraphNode};
use dtse::sensing::NodeId;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Largest entrywise difference relative to the largest entry of `reference`.
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(f64::MIN_POSITIVE)
}

pub fn rel_err_vec(a: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(f64::MIN_POSITIVE)
}

fn random_cell(p: &ModelParams, rng: &mut impl Rng) -> CellState {
    CellState::from_speed(rng.random_range(0.010..0.240), rng.random_range(0.5..p.v_f), p)
}

/// Whether the interface from `up` into a cell of density `down_rho` is at
/// least `margin` (relative) away from every branch switch.
fn interface_clear(p: &ModelParams, up: CellState, down_rho: f64, margin: f64) -> bool {
    let chi = up.chi();
    if chi > p.chi_max() * (1.0 - margin) {
        return false;
    }
    let rho_tol = margin * p.rho_m;
    let flow_tol = margin * p.rho_m * p.v_f;
    let s = p.critical_density(chi).unwrap();
    let d = p.demand(up);
    let sup = p.supply(CellState::new(down_rho, 0.0), chi);
    (up.rho - s).abs() > rho_tol
        && (down_rho - s).abs() > rho_tol
        && (d - sup).abs() > flow_tol
        && d > flow_tol
        && sup > flow_tol
}

fn upstream_clear(p: &ModelParams, first: CellState, u: &BoundaryInput, margin: f64) -> bool {
    let flow_tol = margin * p.rho_m * p.v_f;
    let s_up = p.supply(first, u.chi_up);
    (first.rho - p.critical_density(u.chi_up).unwrap()).abs() > margin * p.rho_m
        && (u.demand_up - s_up).abs() > flow_tol
        && s_up > flow_tol
}

/// True when every demand/supply branch choice and every `min` in the fluxes
/// of `(x, u)` is at least `margin` (relative) away from switching.
pub fn away_from_branches(p: &ModelParams, x: &TrafficState, u: &BoundaryInput, margin: f64) -> bool {
    let n = x.n_cells();
    upstream_clear(p, x.cell(0), u, margin)
        && (1..n).all(|j| interface_clear(p, x.cell(j - 1), x.rho(j), margin))
        && interface_clear(p, x.cell(n - 1), u.rho_down, margin)
}

/// Random physical state: densities in [10, 240] veh/km, speeds up to `v_f`.
pub fn random_state(p: &ModelParams, rng: &mut impl Rng) -> (TrafficState, BoundaryInput) {
    let cells: Vec<CellState> = (0..p.n_cells).map(|_| random_cell(p, rng)).collect();
    let u = BoundaryInput {
        demand_up: rng.random_range(0.0..0.6),
        chi_up: random_cell(p, rng).chi(),
        rho_down: rng.random_range(0.010..0.240),
    };
    (TrafficState::from_cells(&cells), u)
}

/// Random state that clears [`away_from_branches`], drawn cell by cell from
/// upstream: each cell is redrawn until its upstream interface clears.
pub fn random_smooth_state(p: &ModelParams, margin: f64, rng: &mut impl Rng) -> (TrafficState, BoundaryInput) {
    const TRIES: usize = 1000;
    'restart: loop {
        let (_, mut u) = random_state(p, rng);
        let mut cells: Vec<CellState> = Vec::with_capacity(p.n_cells);
        for _ in 0..p.n_cells {
            let next = (0..TRIES).map(|_| random_cell(p, rng)).find(|&c| match cells.last() {
                None => upstream_clear(p, c, &u, margin),
                Some(&up) => interface_clear(p, up, c.rho, margin),
            });
            match next {
                Some(c) => cells.push(c),
                None => continue 'restart,
            }
        }
        let last = cells[cells.len() - 1];
        match (0..TRIES)
            .map(|_| rng.random_range(0.010..0.240))
            .find(|&r| interface_clear(p, last, r, margin))
        {
            Some(r) => u.rho_down = r,
            None => continue 'restart,
        }
        let x = TrafficState::from_cells(&cells);
        assert!(away_from_branches(p, &x, &u, margin));
        return (x, u);
    }
}

/// Central-difference Jacobian of `flux_vector` at `x`.
pub fn fd_jacobian(p: &ModelParams, x: &TrafficState, u: &BoundaryInput) -> DMatrix<f64> {
    let base = x.as_vector().clone();
    let dim = base.len();
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let scale = if j % 2 == 0 { 0.01 } else { 0.5 };
        let h = 1e-6 * base[j].abs().max(scale);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = p.flux_vector(&TrafficState::from_vector(plus).unwrap(), u);
        let fm = p.flux_vector(&TrafficState::from_vector(minus).unwrap(), u);
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Symmetric positive definite matrix with eigenvalues roughly in [1, 1 + dim].
pub fn random_spd(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim)
}

/// CV nodes scattered uniformly over `length` metres.
pub fn random_geometric_graph(n: usize, length: f64, range: f64, rng: &mut impl Rng) -> CommGraph {
    let nodes = (0..n as u64)
        .map(|i| GraphNode {
            id: NodeId::Cv(i),
            position: rng.random_range(0.0..length),
        })
        .collect();
    CommGraph::build(nodes, range)
}

pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}
