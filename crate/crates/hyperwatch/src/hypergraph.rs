//! Hypergraph structure learned from sensor embeddings.
//!
//! Every sensor seeds one hyperedge containing itself plus its k nearest
//! neighbors in embedding space, so the incidence matrix is n x n with
//! exactly k+1 ones per column. The incidence is intentionally not
//! symmetrized: neighbor-of is asymmetric and both directions carry signal
//! downstream. Ties in distance are broken toward the lower sensor index so
//! rebuilding is deterministic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("k = {k} must be in 1..{n} for {n} nodes")]
    BadK { k: usize, n: usize },
    #[error("hyperedge {edge} is empty")]
    EmptyEdge { edge: usize },
    #[error("node {node} belongs to no hyperedge")]
    IsolatedNode { node: usize },
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("hypergraph has no nodes")]
    Empty,
}

/// Incidence structure over `n` nodes and `m` hyperedges.
///
/// `edge_members[p]` lists the nodes of hyperedge `p` ascending;
/// `node_edges[i]` lists the hyperedges containing node `i` ascending.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hypergraph {
    n: usize,
    edge_members: Vec<Vec<usize>>,
    node_edges: Vec<Vec<usize>>,
}

impl Hypergraph {
    pub fn from_edge_members(
        n: usize,
        members: Vec<Vec<usize>>,
    ) -> Result<Self, HypergraphError> {
        if n == 0 {
            return Err(HypergraphError::Empty);
        }
        let mut edge_members = Vec::with_capacity(members.len());
        let mut node_edges = vec![Vec::new(); n];
        for (p, mut m) in members.into_iter().enumerate() {
            if m.is_empty() {
                return Err(HypergraphError::EmptyEdge { edge: p });
            }
            m.sort_unstable();
            m.dedup();
            for &i in &m {
                if i >= n {
                    return Err(HypergraphError::NodeOutOfRange { node: i, n });
                }
                node_edges[i].push(p);
            }
            edge_members.push(m);
        }
        Ok(Hypergraph {
            n,
            edge_members,
            node_edges,
        })
    }

    /// Nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Hyperedges.
    pub fn m(&self) -> usize {
        self.edge_members.len()
    }

    pub fn edge_members(&self, p: usize) -> &[usize] {
        &self.edge_members[p]
    }

    pub fn node_edges(&self, i: usize) -> &[usize] {
        &self.node_edges[i]
    }

    pub fn incidence(&self, i: usize, p: usize) -> bool {
        self.edge_members[p].binary_search(&i).is_ok()
    }

    /// Dense n x m incidence with 0/1 entries.
    pub fn incidence_matrix(&self) -> Vec<u8> {
        let mut h = vec![0u8; self.n * self.m()];
        for (p, members) in self.edge_members.iter().enumerate() {
            for &i in members {
                h[i * self.m() + p] = 1;
            }
        }
        h
    }

    /// Fail if any node is outside every hyperedge; message passing needs a
    /// nonempty neighborhood on both sides.
    pub fn check_coverage(&self) -> Result<(), HypergraphError> {
        for (i, e) in self.node_edges.iter().enumerate() {
            if e.is_empty() {
                return Err(HypergraphError::IsolatedNode { node: i });
            }
        }
        Ok(())
    }

    /// Build the k-nearest-neighbor hypergraph from a node distance matrix
    /// (row-major n x n). Ties break toward the lower index.
    pub fn knn(dist: &[f64], n: usize, k: usize) -> Result<Self, HypergraphError> {
        if n == 0 {
            return Err(HypergraphError::Empty);
        }
        if k == 0 || k >= n {
            return Err(HypergraphError::BadK { k, n });
        }
        let mut members = Vec::with_capacity(n);
        let mut order: Vec<usize> = Vec::with_capacity(n - 1);
        for i in 0..n {
            order.clear();
            order.extend((0..n).filter(|&j| j != i));
            order.sort_by(|&a, &b| {
                dist[i * n + a]
                    .partial_cmp(&dist[i * n + b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut edge: Vec<usize> = order[..k].to_vec();
            edge.push(i);
            members.push(edge);
        }
        Self::from_edge_members(n, members)
    }

    /// Restrict to the retained node set `idx` (ascending): pooled node `j`
    /// is original node `idx[j]`, pooled hyperedge `j` is original hyperedge
    /// `idx[j]` with only retained members. Retained nodes left with no
    /// incident hyperedge get a self-loop in their own column, keeping the
    /// pooled incidence square.
    pub fn restrict(&self, idx: &[usize]) -> Result<Self, HypergraphError> {
        if idx.is_empty() {
            return Err(HypergraphError::Empty);
        }
        let np = idx.len();
        let mut pos = vec![usize::MAX; self.n];
        for (j, &i) in idx.iter().enumerate() {
            if i >= self.n {
                return Err(HypergraphError::NodeOutOfRange { node: i, n: self.n });
            }
            pos[i] = j;
        }
        let mut members: Vec<Vec<usize>> = Vec::with_capacity(np);
        for &p in idx {
            let kept: Vec<usize> = self.edge_members[p]
                .iter()
                .filter_map(|&i| (pos[i] != usize::MAX).then_some(pos[i]))
                .collect();
            members.push(kept);
        }
        // every retained node must stay reachable; give strays a self-loop
        let mut covered = vec![false; np];
        for m in &members {
            for &j in m {
                covered[j] = true;
            }
        }
        for j in 0..np {
            if !covered[j] && !members[j].contains(&j) {
                members[j].push(j);
            }
            if members[j].is_empty() {
                members[j].push(j);
            }
        }
        Self::from_edge_members(np, members)
    }

    /// Flat incidence-pair index: one slot per (hyperedge, member) pair in
    /// (edge, node) ascending order. Attention softmaxes group these slots
    /// by edge or by node.
    pub fn slots(&self) -> Slots {
        let mut edge_of_slot = Vec::new();
        let mut node_of_slot = Vec::new();
        for (p, members) in self.edge_members.iter().enumerate() {
            for &i in members {
                edge_of_slot.push(p);
                node_of_slot.push(i);
            }
        }
        Slots {
            edge_of_slot,
            node_of_slot,
            n_nodes: self.n,
            n_edges: self.m(),
        }
    }
}

/// Incidence pairs of a hypergraph in a fixed order, with the grouping
/// arrays used for per-edge and per-node softmax.
#[derive(Debug, Clone)]
pub struct Slots {
    pub edge_of_slot: Vec<usize>,
    pub node_of_slot: Vec<usize>,
    pub n_nodes: usize,
    pub n_edges: usize,
}

impl Slots {
    pub fn len(&self) -> usize {
        self.edge_of_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_of_slot.is_empty()
    }

    /// 1/|group| weight per slot, grouping by edge or by node. Used when
    /// attention is ablated to a plain mean.
    pub fn uniform_weights(&self, by_edge: bool) -> Vec<f64> {
        let groups = if by_edge { self.n_edges } else { self.n_nodes };
        let ids = if by_edge {
            &self.edge_of_slot
        } else {
            &self.node_of_slot
        };
        let mut count = vec![0usize; groups];
        for &g in ids {
            count[g] += 1;
        }
        ids.iter().map(|&g| 1.0 / count[g] as f64).collect()
    }
}

/// Euclidean distances between the rows of a row-major `n x d` embedding
/// table.
pub fn pairwise_distances(z: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for t in 0..d {
                let diff = z[i * d + t] - z[j * d + t];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            out[i * n + j] = dist;
            out[j * n + i] = dist;
        }
    }
    out
}
