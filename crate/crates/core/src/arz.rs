//! Discretized Aw-Rascle-Zhang (ARZ) traffic model.
//!
//! The highway is split into `N` cells of length `dh`. Each cell carries a
//! density `rho` and a relative flow `psi = rho * chi`, where the driver
//! characteristic is `chi = v + p(rho)`. Cells exchange vehicles through
//! Godunov-type demand/supply interfaces and the state advances as
//!
//! ```text
//! x_{k+1} = A x_k + G f(x_k, u_k) (+ noise)
//! ```
//!
//! with `A = I_N ⊗ [[1, 0], [v_f/tau, 1 - 1/tau]]` and `G = (dt/dh) I`.
//! All quantities are SI: m, s, veh/m, veh/s.

use nalgebra::{DMatrix, DVector};

use crate::error::{DtseError, Result};
use crate::units::{kmh_to_mps, vehkm_to_vehm};

/// Densities below this are treated as this value when dividing `psi / rho`.
pub const RHO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Free-flow speed [m/s].
    pub v_f: f64,
    /// Jam density [veh/m].
    pub rho_m: f64,
    /// Fundamental-diagram exponent.
    pub gamma: f64,
    /// Relaxation time [s].
    pub tau: f64,
    pub n_cells: usize,
    /// Time step [s].
    pub dt: f64,
    /// Cell length [m].
    pub dh: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            v_f: kmh_to_mps(100.0),
            rho_m: vehkm_to_vehm(250.0),
            gamma: 1.25,
            tau: 1.0,
            n_cells: 25,
            dt: 1.0,
            dh: 100.0,
        }
    }
}

impl ModelParams {
    /// Checks positivity and the CFL condition.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_f", self.v_f),
            ("rho_m", self.rho_m),
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("dt", self.dt),
            ("dh", self.dh),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(DtseError::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if self.n_cells == 0 {
            return Err(DtseError::InvalidParameter {
                name: "n_cells",
                reason: "must be at least 1".into(),
            });
        }
        let ratio = self.cfl_ratio();
        if ratio >= 1.0 {
            return Err(DtseError::Cfl { ratio });
        }
        Ok(())
    }

    /// Courant number `v_f * dt / dh`.
    pub fn cfl_ratio(&self) -> f64 {
        self.v_f * self.dt / self.dh
    }

    /// Scalar gain of the flux injection matrix `G`.
    pub fn flux_gain(&self) -> f64 {
        self.dt / self.dh
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_cells
    }

    pub fn psi_max(&self) -> f64 {
        self.v_f * self.rho_m
    }

    pub fn domain_length(&self) -> f64 {
        self.n_cells as f64 * self.dh
    }

    /// Anticipation pressure `p(rho) = v_f (rho / rho_m)^gamma`.
    pub fn pressure(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) {
            return Err(DtseError::Domain {
                quantity: "rho",
                value: rho,
                expected: "rho >= 0",
            });
        }
        Ok(self.p(rho))
    }

    /// Equilibrium speed `V_e(rho) = v_f (1 - (rho / rho_m)^gamma)`.
    pub fn equilibrium_velocity(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0 && rho <= self.rho_m) {
            return Err(DtseError::Domain {
                quantity: "rho",
                value: rho,
                expected: "0 <= rho <= rho_m",
            });
        }
        Ok(self.v_f * (1.0 - (rho / self.rho_m).powf(self.gamma)))
    }

    /// Critical density `sigma(chi) = rho_m (chi / (v_f (1 + gamma)))^(1/gamma)`.
    pub fn critical_density(&self, chi: f64) -> Result<f64> {
        if !(chi >= 0.0) {
            return Err(DtseError::Domain {
                quantity: "chi",
                value: chi,
                expected: "chi >= 0",
            });
        }
        Ok(self.sigma(chi))
    }

    #[inline]
    fn p(&self, rho: f64) -> f64 {
        self.v_f * (rho.max(0.0) / self.rho_m).powf(self.gamma)
    }

    /// dp/drho for rho >= 0.
    #[inline]
    fn p_prime(&self, rho: f64) -> f64 {
        let scale = self.v_f * self.gamma / self.rho_m;
        if rho > 0.0 {
            scale * (rho / self.rho_m).powf(self.gamma - 1.0)
        } else if self.gamma > 1.0 {
            0.0
        } else if self.gamma == 1.0 {
            scale
        } else {
            scale * (RHO_EPS / self.rho_m).powf(self.gamma - 1.0)
        }
    }

    /// Critical density with negative characteristics mapped to zero.
    #[inline]
    fn sigma(&self, chi: f64) -> f64 {
        let chi = chi.max(0.0);
        self.rho_m * (chi / (self.v_f * (1.0 + self.gamma))).powf(1.0 / self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    /// Density [veh/m].
    pub rho: f64,
    /// Relative flow [veh/s].
    pub psi: f64,
}

impl CellState {
    pub fn new(rho: f64, psi: f64) -> Self {
        Self { rho, psi }
    }

    /// Cell state for a given density and mean speed.
    pub fn from_speed(rho: f64, v: f64, p: &ModelParams) -> Self {
        Self {
            rho,
            psi: rho * (v + p.p(rho)),
        }
    }

    /// Driver characteristic `psi / rho`, with `rho` clamped below at [`RHO_EPS`].
    pub fn chi(&self) -> f64 {
        self.psi / self.rho.max(RHO_EPS)
    }

    /// `(chi, dchi/drho, dchi/dpsi)`.
    fn chi_partials(&self) -> (f64, f64, f64) {
        let denom = self.rho.max(RHO_EPS);
        let chi = self.psi / denom;
        let d_rho = if self.rho > RHO_EPS {
            -self.psi / (denom * denom)
        } else {
            0.0
        };
        (chi, d_rho, 1.0 / denom)
    }
}

/// Flat `2N` state vector; cell `i` (0-based) occupies components `2i` and `2i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState(DVector<f64>);

impl TrafficState {
    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(DtseError::Shape(format!(
                "state vector must have even nonzero length, got {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DtseError::Shape("state vector has non-finite entries".into()));
        }
        Ok(Self(v))
    }

    pub fn from_cells(cells: &[CellState]) -> Self {
        Self(DVector::from_iterator(
            2 * cells.len(),
            cells.iter().flat_map(|c| [c.rho, c.psi]),
        ))
    }

    pub fn uniform(n_cells: usize, cell: CellState) -> Self {
        Self::from_cells(&vec![cell; n_cells])
    }

    pub fn n_cells(&self) -> usize {
        self.0.len() / 2
    }

    pub fn cell(&self, i: usize) -> CellState {
        CellState::new(self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn psi(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    pub fn cells(&self) -> impl Iterator<Item = CellState> + '_ {
        (0..self.n_cells()).map(|i| self.cell(i))
    }

    pub fn densities(&self) -> Vec<f64> {
        self.cells().map(|c| c.rho).collect()
    }

    pub fn relative_flows(&self) -> Vec<f64> {
        self.cells().map(|c| c.psi).collect()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// Boundary input `u_k = (D_0, chi_0, rho_{N+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryInput {
    /// Upstream demand [veh/s].
    pub demand_up: f64,
    /// Upstream driver characteristic [m/s].
    pub chi_up: f64,
    /// Density of the virtual cell downstream of the domain [veh/m].
    pub rho_down: f64,
}

impl BoundaryInput {
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        if !(self.demand_up >= 0.0) {
            return Err(DtseError::Domain {
                quantity: "demand_up",
                value: self.demand_up,
                expected: "demand_up >= 0",
            });
        }
        if !(self.chi_up >= 0.0) {
            return Err(DtseError::Domain {
                quantity: "chi_up",
                value: self.chi_up,
                expected: "chi_up >= 0",
            });
        }
        if !(self.rho_down >= 0.0 && self.rho_down <= p.rho_m) {
            return Err(DtseError::Domain {
                quantity: "rho_down",
                value: self.rho_down,
                expected: "0 <= rho_down <= rho_m",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linearization {
    pub lambda: DMatrix<f64>,
    pub eta: DVector<f64>,
}

/// Value of a demand or supply function with its partial derivatives with
/// respect to the cell density and the governing driver characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Partial {
    value: f64,
    d_rho: f64,
    d_chi: f64,
}

impl Partial {
    const ZERO: Partial = Partial {
        value: 0.0,
        d_rho: 0.0,
        d_chi: 0.0,
    };

    fn clamped(self) -> Self {
        if self.value < 0.0 {
            Self::ZERO
        } else {
            self
        }
    }
}

impl ModelParams {
    fn demand_partial(&self, rho: f64, chi: f64) -> Partial {
        let r = rho.max(0.0);
        let dr = if rho >= 0.0 { 1.0 } else { 0.0 };
        let sig = self.sigma(chi);
        let out = if r <= sig {
            Partial {
                value: r * (chi - self.p(r)),
                d_rho: (chi - self.p(r) - r * self.p_prime(r)) * dr,
                d_chi: r,
            }
        } else {
            // sigma maximizes r (chi - p(r)), so the chi-derivative reduces to sigma.
            Partial {
                value: sig * (chi - self.p(sig)),
                d_rho: 0.0,
                d_chi: if chi > 0.0 { sig } else { 0.0 },
            }
        };
        out.clamped()
    }

    fn supply_partial(&self, rho: f64, chi_up: f64) -> Partial {
        let r = rho.max(0.0);
        let dr = if rho >= 0.0 { 1.0 } else { 0.0 };
        let sig = self.sigma(chi_up);
        let out = if r <= sig {
            Partial {
                value: sig * (chi_up - self.p(sig)),
                d_rho: 0.0,
                d_chi: if chi_up > 0.0 { sig } else { 0.0 },
            }
        } else {
            Partial {
                value: r * (chi_up - self.p(r)),
                d_rho: (chi_up - self.p(r) - r * self.p_prime(r)) * dr,
                d_chi: r,
            }
        };
        out.clamped()
    }

    /// Maximum flow that can leave `cell` [veh/s].
    pub fn demand(&self, cell: CellState) -> f64 {
        self.demand_partial(cell.rho, cell.chi()).value
    }

    /// Maximum flow that `cell` can accept from an upstream neighbour with
    /// characteristic `chi_upstream` [veh/s].
    pub fn supply(&self, cell: CellState, chi_upstream: f64) -> f64 {
        self.supply_partial(cell.rho, chi_upstream).value
    }

    /// Flux `q = min(D_up, S_down)` and relative flux `phi = q chi_up` across
    /// the interface between `up` and `down`.
    pub fn interface_flux(&self, up: CellState, down: CellState) -> (f64, f64) {
        let f = self.interior_interface(up, down);
        (f.q, f.phi)
    }

    /// Largest driver characteristic used in fluxes, where `sigma(chi) = rho_m`.
    pub fn chi_max(&self) -> f64 {
        self.v_f * (1.0 + self.gamma)
    }

    /// `chi_partials` capped at [`Self::chi_max`]. Physical states have
    /// `chi <= 2 v_f` and are unaffected; the cap only bites for estimates
    /// such as `rho = 0, psi > 0`.
    fn bounded_chi(&self, cell: CellState) -> (f64, f64, f64) {
        let (chi, d_rho, d_psi) = cell.chi_partials();
        if chi > self.chi_max() {
            (self.chi_max(), 0.0, 0.0)
        } else {
            (chi, d_rho, d_psi)
        }
    }

    fn interior_interface(&self, up: CellState, down: CellState) -> InterfaceFlux {
        let (chi, dchi_rho, dchi_psi) = self.bounded_chi(up);
        let d = self.demand_partial(up.rho, chi);
        let s = self.supply_partial(down.rho, chi);
        // Ties go to demand.
        let (q, dq) = if d.value <= s.value {
            (
                d.value,
                [d.d_rho + d.d_chi * dchi_rho, d.d_chi * dchi_psi, 0.0],
            )
        } else {
            (
                s.value,
                [s.d_chi * dchi_rho, s.d_chi * dchi_psi, s.d_rho],
            )
        };
        let phi = q * chi;
        let dphi = [
            chi * dq[0] + q * dchi_rho,
            chi * dq[1] + q * dchi_psi,
            chi * dq[2],
        ];
        InterfaceFlux { q, phi, dq, dphi }
    }

    fn upstream_interface(&self, first: CellState, u: &BoundaryInput) -> InterfaceFlux {
        let s = self.supply_partial(first.rho, u.chi_up);
        let (q, dq_down) = if u.demand_up <= s.value {
            (u.demand_up.max(0.0), 0.0)
        } else {
            (s.value, s.d_rho)
        };
        InterfaceFlux {
            q,
            phi: q * u.chi_up,
            dq: [0.0, 0.0, dq_down],
            dphi: [0.0, 0.0, u.chi_up * dq_down],
        }
    }

    fn downstream_interface(&self, last: CellState, u: &BoundaryInput) -> InterfaceFlux {
        let virtual_cell = CellState::new(u.rho_down, 0.0);
        let mut f = self.interior_interface(last, virtual_cell);
        f.dq[2] = 0.0;
        f.dphi[2] = 0.0;
        f
    }

    /// The `N + 1` interface fluxes; interface `j` sits between cells `j - 1` and `j`.
    fn interfaces(&self, x: &TrafficState, u: &BoundaryInput) -> Vec<InterfaceFlux> {
        let n = x.n_cells();
        let mut out = Vec::with_capacity(n + 1);
        out.push(self.upstream_interface(x.cell(0), u));
        for j in 1..n {
            out.push(self.interior_interface(x.cell(j - 1), x.cell(j)));
        }
        out.push(self.downstream_interface(x.cell(n - 1), u));
        out
    }

    /// Net inflow vector `f(x, u)`; pair `i` is `(q_{i-1} - q_i, phi_{i-1} - phi_i)`.
    pub fn flux_vector(&self, x: &TrafficState, u: &BoundaryInput) -> DVector<f64> {
        net_inflow(&self.interfaces(x, u))
    }

    /// [`Self::flux_vector`] with no flow through either end of the road.
    pub fn closed_flux_vector(&self, x: &TrafficState) -> DVector<f64> {
        let n = x.n_cells();
        let wall = InterfaceFlux {
            q: 0.0,
            phi: 0.0,
            dq: [0.0; 3],
            dphi: [0.0; 3],
        };
        let mut ifaces = Vec::with_capacity(n + 1);
        ifaces.push(wall);
        ifaces.extend((1..n).map(|j| self.interior_interface(x.cell(j - 1), x.cell(j))));
        ifaces.push(wall);
        net_inflow(&ifaces)
    }

    /// Noise-free step of a road closed at both ends.
    pub fn step_closed(&self, x: &TrafficState) -> TrafficState {
        let mut next = self.apply_transition(x.as_vector());
        next.axpy(self.flux_gain(), &self.closed_flux_vector(x), 1.0);
        TrafficState(next)
    }

    /// Analytic Jacobian of [`Self::flux_vector`] with respect to the state.
    ///
    /// Branch selection follows the evaluation, so at thresholds this is the
    /// one-sided derivative of the branch actually used.
    pub fn jacobian_flux(&self, x: &TrafficState, u: &BoundaryInput) -> DMatrix<f64> {
        let n = x.n_cells();
        let ifaces = self.interfaces(x, u);
        let mut jac = DMatrix::zeros(2 * n, 2 * n);

        let mut add = |j: usize, sign: f64, row: usize| {
            let f = &ifaces[j];
            // Upstream cell of interface j is j - 1, downstream cell is j.
            if j >= 1 {
                let c = 2 * (j - 1);
                jac[(row, c)] += sign * f.dq[0];
                jac[(row, c + 1)] += sign * f.dq[1];
                jac[(row + 1, c)] += sign * f.dphi[0];
                jac[(row + 1, c + 1)] += sign * f.dphi[1];
            }
            if j < n {
                let c = 2 * j;
                jac[(row, c)] += sign * f.dq[2];
                jac[(row + 1, c)] += sign * f.dphi[2];
            }
        };
        for i in 0..n {
            add(i, 1.0, 2 * i);
            add(i + 1, -1.0, 2 * i);
        }
        jac
    }

    /// `A x` without forming `A`.
    pub fn apply_transition(&self, x: &DVector<f64>) -> DVector<f64> {
        let a21 = self.v_f / self.tau;
        let a22 = 1.0 - 1.0 / self.tau;
        DVector::from_fn(x.len(), |r, _| {
            if r % 2 == 0 {
                x[r]
            } else {
                a21 * x[r - 1] + a22 * x[r]
            }
        })
    }

    /// Dense block-diagonal transition matrix `A`.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let dim = self.state_dim();
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..self.n_cells {
            a[(2 * i, 2 * i)] = 1.0;
            a[(2 * i + 1, 2 * i)] = self.v_f / self.tau;
            a[(2 * i + 1, 2 * i + 1)] = 1.0 - 1.0 / self.tau;
        }
        a
    }

    /// One unprojected model step `A x + G f(x, u) + noise`.
    pub fn step(
        &self,
        x: &TrafficState,
        u: &BoundaryInput,
        noise: Option<&DVector<f64>>,
    ) -> TrafficState {
        let mut next = self.apply_transition(x.as_vector());
        next.axpy(self.flux_gain(), &self.flux_vector(x, u), 1.0);
        if let Some(w) = noise {
            next += w;
        }
        TrafficState(next)
    }

    /// Linearizes the step map around `x_hat`: `lambda = A + G J`,
    /// `eta = G (f(x_hat) - J x_hat)`.
    pub fn linearize(&self, x_hat: &TrafficState, u: &BoundaryInput) -> Linearization {
        let g = self.flux_gain();
        let jac = self.jacobian_flux(x_hat, u);
        let f = self.flux_vector(x_hat, u);
        let eta = (f - &jac * x_hat.as_vector()) * g;
        let lambda = self.transition_matrix() + jac * g;
        Linearization { lambda, eta }
    }
}

fn net_inflow(ifaces: &[InterfaceFlux]) -> DVector<f64> {
    let n = ifaces.len() - 1;
    DVector::from_fn(2 * n, |r, _| {
        let i = r / 2;
        if r % 2 == 0 {
            ifaces[i].q - ifaces[i + 1].q
        } else {
            ifaces[i].phi - ifaces[i + 1].phi
        }
    })
}

#[derive(Debug, Clone, Copy)]
struct InterfaceFlux {
    q: f64,
    phi: f64,
    /// Derivatives of `q` w.r.t. (upstream rho, upstream psi, downstream rho).
    dq: [f64; 3],
    dphi: [f64; 3],
}
