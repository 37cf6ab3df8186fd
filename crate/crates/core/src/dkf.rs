//! Information-form distributed Kalman filter over the ARZ model.
//!
//! Each node keeps an information pair `(xi, Xi) = (P^-1 x, P^-1)`. One time
//! step runs, for every active node:
//!
//! 1. linearize the model around the node's current estimate,
//! 2. add its own measurement in information space,
//! 3. average information pairs with its neighbours for `L` rounds,
//! 4. predict with the matrix inversion lemma,
//! 5. clamp the estimate into the physical box and re-derive `xi`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use rayon::prelude::*;

use crate::arz::{BoundaryInput, CellState, Linearization, ModelParams, TrafficState};
use crate::comms::{CommGraph, ConsensusWeights};
use crate::error::{DtseError, Result};
use crate::sensing::{Measurement, MeasurementMatrix, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct InfoPair {
    /// Information vector `xi = Xi x`.
    pub xi: DVector<f64>,
    /// Information matrix `Xi = P^-1`.
    pub info: DMatrix<f64>,
}

impl InfoPair {
    /// Pair for mean `x` and covariance `cov`.
    pub fn from_moments(x: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(cov, "initial covariance")?;
        let info = chol.inverse();
        let xi = &info * x;
        let mut pair = Self { xi, info };
        pair.symmetrize();
        Ok(pair)
    }

    /// Mean `Xi^-1 xi`.
    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(cholesky(&self.info, "information matrix")?.solve(&self.xi))
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.info);
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// Adds `C^T R^-1 y` and `C^T R^-1 C` for a single-cell measurement.
    pub fn absorb(&mut self, y: &Vector2<f64>, c: &MeasurementMatrix, noise: &Matrix2<f64>) -> Result<()> {
        let r_inv = noise
            .try_inverse()
            .ok_or(DtseError::NotPositiveDefinite("measurement noise covariance"))?;
        let theta = r_inv * y;
        let base = 2 * c.cell();
        for a in 0..2 {
            self.xi[base + a] += theta[a];
            for b in 0..2 {
                self.info[(base + a, base + b)] += r_inv[(a, b)];
            }
        }
        Ok(())
    }
}

fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(DtseError::NotPositiveDefinite(what))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Diagonal process-noise covariance `Q` (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoise {
    diag: DVector<f64>,
    inv_diag: DVector<f64>,
}

impl ProcessNoise {
    pub fn diagonal(diag: DVector<f64>) -> Result<Self> {
        if diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(DtseError::NotPositiveDefinite("process noise covariance"));
        }
        let inv_diag = diag.map(|v| 1.0 / v);
        Ok(Self { diag, inv_diag })
    }

    /// `I_N ⊗ diag(var_rho, var_psi)`.
    pub fn per_cell(n_cells: usize, var_rho: f64, var_psi: f64) -> Result<Self> {
        Self::diagonal(DVector::from_fn(2 * n_cells, |r, _| {
            if r % 2 == 0 {
                var_rho
            } else {
                var_psi
            }
        }))
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn inverse_diag(&self) -> &DVector<f64> {
        &self.inv_diag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }
}

/// One synchronous averaging round. Every output reads only the inputs.
pub fn consensus_round(pairs: &[InfoPair], weights: &ConsensusWeights) -> Vec<InfoPair> {
    assert_eq!(pairs.len(), weights.len(), "one pair per graph node");
    (0..pairs.len())
        .map(|i| {
            let ws = weights.self_weight[i];
            let mut xi = &pairs[i].xi * ws;
            let mut info = &pairs[i].info * ws;
            for &(j, w) in &weights.neighbor[i] {
                xi.axpy(w, &pairs[j].xi, 1.0);
                info += &pairs[j].info * w;
            }
            InfoPair { xi, info }
        })
        .collect()
}

/// `rounds` consensus rounds followed by symmetrization.
pub fn fuse(mut pairs: Vec<InfoPair>, weights: &ConsensusWeights, rounds: usize) -> Vec<InfoPair> {
    for _ in 0..rounds {
        pairs = consensus_round(&pairs, weights);
    }
    for p in &mut pairs {
        p.symmetrize();
    }
    pairs
}

/// Information-form prediction through the linearized model:
///
/// ```text
/// M    = (Xi_bar + Lambda^T Q^-1 Lambda)^-1
/// Xi_+ = Q^-1 - Q^-1 Lambda M Lambda^T Q^-1
/// xi_+ = Xi_+ (Lambda Xi_bar^-1 xi_bar + eta)
/// ```
///
/// `M` is never formed; products with it go through a Cholesky solve.
pub fn predict(fused: &InfoPair, lin: &Linearization, q: &ProcessNoise) -> Result<InfoPair> {
    let qinv = q.inverse_diag();
    let lambda = &lin.lambda;
    let n = fused.dim();

    // B = Lambda^T Q^-1
    let mut b = lambda.transpose();
    for (j, mut col) in b.column_iter_mut().enumerate() {
        col *= qinv[j];
    }
    let mut s = &fused.info + &b * lambda;
    symmetrize(&mut s);
    let x = cholesky(&s, "Xi_bar + Lambda^T Q^-1 Lambda")?.solve(&b);
    let mut info = -(b.transpose() * x);
    for i in 0..n {
        info[(i, i)] += qinv[i];
    }
    symmetrize(&mut info);

    let mean = fused.mean()?;
    let propagated = lambda * mean + &lin.eta;
    let xi = &info * propagated;
    Ok(InfoPair { xi, info })
}

/// Clamps every cell into `[0, rho_m] x [0, v_f rho_m]`.
pub fn project(x: &TrafficState, p: &ModelParams) -> TrafficState {
    let cells: Vec<CellState> = x
        .cells()
        .map(|c| CellState::new(c.rho.clamp(0.0, p.rho_m), c.psi.clamp(0.0, p.psi_max())))
        .collect();
    TrafficState::from_cells(&cells)
}

/// Replaces the mean of `pair` with its projection, leaving `Xi` untouched.
/// Returns the projected estimate.
pub fn finalize_constraint(pair: &mut InfoPair, p: &ModelParams) -> Result<TrafficState> {
    let raw = TrafficState::from_vector(pair.mean()?)?;
    let projected = project(&raw, p);
    pair.xi = &pair.info * projected.as_vector();
    Ok(projected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFilter {
    pub id: NodeId,
    /// Predicted pair for the current step, with `xi` matching `estimate`.
    pub prior: InfoPair,
    /// Projected estimate for the current step.
    pub estimate: TrafficState,
}

impl NodeFilter {
    pub fn new(id: NodeId, x0: &TrafficState, p0: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            id,
            prior: InfoPair::from_moments(x0.as_vector(), p0)?,
            estimate: x0.clone(),
        })
    }
}

/// Tuning shared by every node.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub params: ModelParams,
    pub process_noise: ProcessNoise,
    pub initial_mean: TrafficState,
    pub initial_cov: DMatrix<f64>,
    pub consensus_rounds: usize,
}

/// The set of active node filters.
#[derive(Debug, Clone)]
pub struct DkfNetwork {
    config: FilterConfig,
    nodes: BTreeMap<NodeId, NodeFilter>,
}

impl DkfNetwork {
    pub fn new(config: FilterConfig) -> Self {
        Self {
            config,
            nodes: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeFilter> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeFilter> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Makes `active` the node set: new ids start from the global prior,
    /// ids not in `active` are dropped. Returns the ids that joined.
    pub fn set_active(&mut self, active: &BTreeSet<NodeId>) -> Result<Vec<NodeId>> {
        self.nodes.retain(|id, _| active.contains(id));
        let mut joined = Vec::new();
        for &id in active {
            if !self.nodes.contains_key(&id) {
                let node = NodeFilter::new(id, &self.config.initial_mean, &self.config.initial_cov)?;
                self.nodes.insert(id, node);
                joined.push(id);
            }
        }
        Ok(joined)
    }

    /// Runs one full filter step. `graph` must contain exactly the active nodes.
    pub fn step(
        &mut self,
        k: usize,
        u: &BoundaryInput,
        measurements: &BTreeMap<NodeId, Measurement>,
        graph: &CommGraph,
    ) -> Result<()> {
        if graph.len() != self.nodes.len()
            || graph.nodes.iter().any(|n| !self.nodes.contains_key(&n.id))
        {
            return Err(DtseError::Shape(format!(
                "graph has {} nodes but {} filters are active",
                graph.len(),
                self.nodes.len()
            )));
        }
        let params = self.config.params;
        let n_cells = params.n_cells;
        let ids: Vec<NodeId> = graph.nodes.iter().map(|n| n.id).collect();

        // Steps 1 and 2, independent per node.
        let local: Vec<(Linearization, InfoPair)> = ids
            .par_iter()
            .map(|id| {
                let node = &self.nodes[id];
                let lin = params.linearize(&node.estimate, u);
                let mut pair = node.prior.clone();
                if let Some(m) = measurements.get(id) {
                    let c = crate::sensing::measurement_matrix(m.cell, n_cells)?;
                    pair.absorb(&m.y, &c, &m.noise)
                        .map_err(|e| numerical(*id, k, e))?;
                }
                Ok((lin, pair))
            })
            .collect::<Result<_>>()?;
        let (lins, pairs): (Vec<_>, Vec<_>) = local.into_iter().unzip();

        // Step 3, synchronous rounds.
        let weights = graph.metropolis_weights();
        let fused = fuse(pairs, &weights, self.config.consensus_rounds);

        // Steps 4 and 5.
        let q = &self.config.process_noise;
        let updated: Vec<NodeFilter> = ids
            .par_iter()
            .zip(fused.par_iter().zip(lins.par_iter()))
            .map(|(&id, (pair, lin))| {
                let mut prior = predict(pair, lin, q).map_err(|e| numerical(id, k, e))?;
                let estimate =
                    finalize_constraint(&mut prior, &params).map_err(|e| numerical(id, k, e))?;
                Ok(NodeFilter {
                    id,
                    prior,
                    estimate,
                })
            })
            .collect::<Result<_>>()?;
        for node in updated {
            self.nodes.insert(node.id, node);
        }
        Ok(())
    }
}

fn numerical(node: NodeId, step: usize, err: DtseError) -> DtseError {
    DtseError::Numerical {
        node,
        step,
        what: err.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::GraphNode;
    use crate::sensing::measurement_matrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.5)
    }

    #[test]
    fn identity_prior() {
        let x = TrafficState::from_cells(&[CellState::new(0.1, 2.0), CellState::new(0.05, 1.0)]);
        let node = NodeFilter::new(NodeId::Rsu(0), &x, &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(node.prior.info, DMatrix::identity(4, 4));
        assert_eq!(&node.prior.xi, x.as_vector());
    }

    #[test]
    fn init_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p0 = random_spd(6, &mut rng);
        let x = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
        let pair = InfoPair::from_moments(&x, &p0).unwrap();
        assert!((pair.mean().unwrap() - x).amax() < 1e-10);
        let singular = DMatrix::zeros(6, 6);
        assert!(InfoPair::from_moments(&DVector::zeros(6), &singular).is_err());
    }

    #[test]
    fn absorb_matches_covariance_form_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_cells = 3;
        let p = random_spd(6, &mut rng);
        let x = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
        let r = Matrix2::new(0.3, 0.05, 0.05, 0.2);
        let y = Vector2::new(0.4, 0.7);
        let c = measurement_matrix(1, n_cells).unwrap();

        let mut pair = InfoPair::from_moments(&x, &p).unwrap();
        pair.absorb(&y, &c, &r).unwrap();

        // Covariance-form Kalman update with a dense C.
        let cd = c.to_dense();
        let rd = DMatrix::from_row_slice(2, 2, r.as_slice());
        let s = &cd * &p * cd.transpose() + &rd;
        let gain = &p * cd.transpose() * s.try_inverse().unwrap();
        let innov = DVector::from_vec(vec![y[0], y[1]]) - &cd * &x;
        let x_post = &x + &gain * innov;
        let p_post = (DMatrix::identity(6, 6) - &gain * &cd) * &p;

        let info_oracle = p_post.clone().try_inverse().unwrap();
        assert!((&pair.info - &info_oracle).amax() / info_oracle.amax() < 1e-10);
        assert!((pair.mean().unwrap() - x_post).amax() < 1e-10);
    }

    #[test]
    fn huge_noise_barely_updates() {
        let x = DVector::from_vec(vec![0.1, 1.0, 0.2, 2.0]);
        let mut pair = InfoPair::from_moments(&x, &DMatrix::identity(4, 4)).unwrap();
        let before = pair.clone();
        let r = Matrix2::identity() * 1e14;
        pair.absorb(&Vector2::new(5.0, 5.0), &measurement_matrix(0, 2).unwrap(), &r)
            .unwrap();
        assert!((&pair.info - &before.info).amax() < 1e-13);
        assert!((&pair.xi - &before.xi).amax() < 1e-13);
    }

    #[test]
    fn predict_reduces_to_sum_of_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_spd(4, &mut rng);
        let q = ProcessNoise::diagonal(DVector::from_vec(vec![0.5, 0.2, 0.3, 0.9])).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let pair = InfoPair::from_moments(&x, &p).unwrap();
        let lin = Linearization {
            lambda: DMatrix::identity(4, 4),
            eta: DVector::zeros(4),
        };
        let next = predict(&pair, &lin, &q).unwrap();
        let oracle = (&p + q.to_dense()).try_inverse().unwrap();
        assert!((&next.info - &oracle).amax() / oracle.amax() < 1e-12);
        assert!((next.mean().unwrap() - x).amax() < 1e-10);
    }

    #[test]
    fn diagonal_q_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let p = random_spd(n, &mut rng);
        let qd = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        let q = ProcessNoise::diagonal(qd.clone()).unwrap();
        let lambda = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let eta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let pair = InfoPair::from_moments(&x, &p).unwrap();
        let next = predict(&pair, &Linearization { lambda: lambda.clone(), eta: eta.clone() }, &q).unwrap();

        // Dense lemma with explicit inverses.
        let qinv = DMatrix::from_diagonal(&qd).try_inverse().unwrap();
        let m = (&pair.info + lambda.transpose() * &qinv * &lambda)
            .try_inverse()
            .unwrap();
        let info = &qinv - &qinv * &lambda * m * lambda.transpose() * &qinv;
        let xi = &info * (&lambda * pair.info.clone().try_inverse().unwrap() * &pair.xi + &eta);
        assert!((&next.info - &info).amax() / info.amax() < 1e-10);
        assert!((&next.xi - &xi).amax() / xi.amax() < 1e-10);
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let p = ModelParams::default();
        let x = TrafficState::from_cells(&[
            CellState::new(-0.003, 1.0),
            CellState::new(0.3, 10.0),
            CellState::new(0.1, -2.0),
            CellState::new(0.1, 1e3),
        ]);
        let y = project(&x, &p);
        assert_eq!(y.rho(0), 0.0);
        assert_relative_eq!(y.rho(1), 0.25);
        assert_eq!(y.psi(2), 0.0);
        assert_relative_eq!(y.psi(3), p.psi_max());
        assert_eq!(project(&y, &p), y);
        let inside = TrafficState::from_cells(&[CellState::new(0.05, 1.3)]);
        assert_eq!(project(&inside, &p), inside);
    }

    #[test]
    fn finalize_keeps_information_matrix() {
        let p = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(4, &mut rng) * 1e-3;

        let inside = DVector::from_vec(vec![0.05, 1.3, 0.1, 2.0]);
        let mut pair = InfoPair::from_moments(&inside, &cov).unwrap();
        let before = pair.clone();
        finalize_constraint(&mut pair, &p).unwrap();
        assert_eq!(pair.info, before.info);
        assert!((&pair.xi - &before.xi).amax() / before.xi.amax() < 1e-10);

        let outside = DVector::from_vec(vec![-0.05, 1.3, 0.4, 2.0]);
        let mut pair = InfoPair::from_moments(&outside, &cov).unwrap();
        let info_before = pair.info.clone();
        let est = finalize_constraint(&mut pair, &p).unwrap();
        assert_eq!(pair.info, info_before);
        assert_eq!(est.rho(0), 0.0);
        assert_eq!(est.rho(1), p.rho_m);
        assert!((pair.mean().unwrap() - est.as_vector()).amax() < 1e-10);
    }

    fn tiny_config(n_cells: usize) -> FilterConfig {
        let params = ModelParams {
            n_cells,
            ..ModelParams::default()
        };
        FilterConfig {
            params,
            process_noise: ProcessNoise::per_cell(n_cells, 4e-6, 3e-5).unwrap(),
            initial_mean: TrafficState::uniform(n_cells, CellState::new(0.05, 0.05 * params.v_f)),
            initial_cov: DMatrix::from_diagonal(&DVector::from_fn(2 * n_cells, |r, _| {
                if r % 2 == 0 {
                    1e-6
                } else {
                    1e-7
                }
            })),
            consensus_rounds: 5,
        }
    }

    fn u(p: &ModelParams) -> BoundaryInput {
        BoundaryInput {
            demand_up: 1.0,
            chi_up: p.v_f,
            rho_down: 0.04,
        }
    }

    #[test]
    fn isolated_node_runs_pure_prediction() {
        let cfg = tiny_config(4);
        let params = cfg.params;
        let mut net = DkfNetwork::new(cfg.clone());
        let id = NodeId::Cv(1);
        net.set_active(&BTreeSet::from([id])).unwrap();
        let graph = CommGraph::build(vec![GraphNode { id, position: 10.0 }], 400.0);
        net.step(0, &u(&params), &BTreeMap::new(), &graph).unwrap();

        let lin = params.linearize(&cfg.initial_mean, &u(&params));
        let pair = InfoPair::from_moments(cfg.initial_mean.as_vector(), &cfg.initial_cov).unwrap();
        let mut expected = predict(&pair, &lin, &cfg.process_noise).unwrap();
        let est = finalize_constraint(&mut expected, &params).unwrap();
        let node = net.node(id).unwrap();
        assert!((node.estimate.as_vector() - est.as_vector()).amax() < 1e-12);
        assert!((&node.prior.info - &expected.info).amax() / expected.info.amax() < 1e-12);
    }

    #[test]
    fn colocated_nodes_agree() {
        let cfg = tiny_config(4);
        let params = cfg.params;
        let mut net = DkfNetwork::new(cfg);
        let a = NodeId::Cv(1);
        let b = NodeId::Cv(2);
        net.set_active(&BTreeSet::from([a, b])).unwrap();
        let graph = CommGraph::build(
            vec![GraphNode { id: a, position: 50.0 }, GraphNode { id: b, position: 50.0 }],
            400.0,
        );
        let noise = Matrix2::new(4e-6, 0.0, 0.0, 3e-5);
        let meas = |id| Measurement {
            y: Vector2::new(0.08, 1.5),
            cell: 0,
            sensor: id,
            k: 0,
            noise,
        };
        let ms = BTreeMap::from([(a, meas(a)), (b, meas(b))]);
        for k in 0..5 {
            net.step(k, &u(&params), &ms, &graph).unwrap();
        }
        let ea = net.node(a).unwrap();
        let eb = net.node(b).unwrap();
        assert!((ea.estimate.as_vector() - eb.estimate.as_vector()).amax() < 1e-12);
    }

    #[test]
    fn consensus_preserves_sums_and_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nodes: Vec<GraphNode> = (0..8)
            .map(|i| GraphNode {
                id: NodeId::Cv(i),
                position: rng.random_range(0.0..1500.0),
            })
            .collect();
        let graph = CommGraph::build(nodes, 400.0);
        let w = graph.metropolis_weights();
        let pairs: Vec<InfoPair> = (0..8)
            .map(|_| {
                let x = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.0));
                InfoPair::from_moments(&x, &random_spd(4, &mut rng)).unwrap()
            })
            .collect();
        let next = consensus_round(&pairs, &w);
        let sum_xi = |ps: &[InfoPair]| ps.iter().fold(DVector::zeros(4), |a, p| a + &p.xi);
        let sum_info = |ps: &[InfoPair]| ps.iter().fold(DMatrix::zeros(4, 4), |a, p| a + &p.info);
        assert!((sum_xi(&pairs) - sum_xi(&next)).amax() < 1e-12);
        assert!((sum_info(&pairs) - sum_info(&next)).amax() < 1e-12);

        let same = vec![pairs[0].clone(); 8];
        let after = consensus_round(&same, &w);
        for p in &after {
            assert!((&p.xi - &pairs[0].xi).amax() < 1e-13);
            assert!((&p.info - &pairs[0].info).amax() < 1e-13);
        }
    }
}
