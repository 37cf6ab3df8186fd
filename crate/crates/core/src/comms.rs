//! Time-varying V2X communication graph and consensus weights.

use std::fmt;

use crate::sensing::{NodeId, SensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkType {
    /// Wired link between roadside units.
    P2p,
    /// Vehicle to vehicle.
    V2v,
    /// Vehicle to infrastructure.
    V2i,
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkType::P2p => "P2P",
            LinkType::V2v => "V2V",
            LinkType::V2i => "V2I",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    /// Study-domain position [m].
    pub position: f64,
}

/// Undirected graph over the sensors active at one time step. Node indices
/// refer to positions in `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    pub nodes: Vec<GraphNode>,
    /// Edges `(a, b, type)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize, LinkType)>,
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Links every pair within `range` (inclusive) and every pair of
    /// consecutive RSUs (by position) regardless of distance.
    pub fn build(nodes: Vec<GraphNode>, range: f64) -> Self {
        let n = nodes.len();
        let mut linked = vec![vec![false; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                if (nodes[a].position - nodes[b].position).abs() <= range {
                    linked[a][b] = true;
                }
            }
        }
        let mut rsus: Vec<usize> = (0..n)
            .filter(|&i| nodes[i].id.kind() == SensorKind::Rsu)
            .collect();
        rsus.sort_by(|&a, &b| nodes[a].position.total_cmp(&nodes[b].position));
        for w in rsus.windows(2) {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            linked[a][b] = true;
        }

        let mut edges = Vec::new();
        let mut adjacency = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if linked[a][b] {
                    let kind = match (nodes[a].id.kind(), nodes[b].id.kind()) {
                        (SensorKind::Rsu, SensorKind::Rsu) => LinkType::P2p,
                        (SensorKind::Cv, SensorKind::Cv) => LinkType::V2v,
                        _ => LinkType::V2i,
                    };
                    edges.push((a, b, kind));
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        Self {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Metropolis-Hastings weights: `1 / (1 + max(deg_l, deg_j))` on each edge,
    /// the remainder on the diagonal.
    pub fn metropolis_weights(&self) -> ConsensusWeights {
        let n = self.len();
        let mut neighbor = vec![Vec::new(); n];
        let mut self_weight = vec![1.0; n];
        for &(a, b, _) in &self.edges {
            let w = 1.0 / (1.0 + self.degree(a).max(self.degree(b)) as f64);
            neighbor[a].push((b, w));
            neighbor[b].push((a, w));
            self_weight[a] -= w;
            self_weight[b] -= w;
        }
        for row in &mut neighbor {
            row.sort_by_key(|&(j, _)| j);
        }
        ConsensusWeights {
            self_weight,
            neighbor,
        }
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                comp.push(i);
                for &j in &self.adjacency[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Sparse doubly stochastic weight matrix compatible with a [`CommGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    pub self_weight: Vec<f64>,
    /// `(neighbor index, weight)` per node.
    pub neighbor: Vec<Vec<(usize, f64)>>,
}

impl ConsensusWeights {
    pub fn len(&self) -> usize {
        self.self_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.self_weight.is_empty()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut w = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            w[(i, i)] = self.self_weight[i];
            for &(j, v) in &self.neighbor[i] {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// One averaging round on a scalar per node.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.neighbor[i]
                    .iter()
                    .fold(self.self_weight[i] * values[i], |acc, &(j, w)| {
                        acc + w * values[j]
                    })
            })
            .collect()
    }
}
