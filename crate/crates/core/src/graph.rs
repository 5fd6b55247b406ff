//! Undirected enterprise graph built by k-nearest-neighbor cosine similarity
//! over industry/region profiles.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, SparseAggregator};

pub const DEFAULT_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnterpriseGraph {
    node_count: usize,
    /// Unordered pairs stored as `(u, v)` with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl EnterpriseGraph {
    /// Builds from an arbitrary list of unordered pairs. Self-pairs and
    /// duplicates are dropped.
    pub fn from_edges(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= node_count || b >= node_count {
                return Err(Error::Data(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for ns in &mut neighbors {
            ns.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: set.into_iter().collect(),
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn degree_stats(&self) -> DegreeStats {
        if self.node_count == 0 || self.edges.is_empty() {
            return DegreeStats {
                min: 0,
                max: 0,
                mean: 0.0,
            };
        }
        let degs = self.neighbors.iter().map(Vec::len);
        DegreeStats {
            min: degs.clone().min().unwrap_or(0),
            max: degs.max().unwrap_or(0),
            mean: 2.0 * self.edges.len() as f64 / self.node_count as f64,
        }
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::Config("permutation length differs from node count".into()));
        }
        Self::from_edges(self.node_count, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }

    /// Unit-weight neighbor sum operator (no self term).
    pub fn neighbor_sum_operator(&self) -> Arc<SparseAggregator> {
        Arc::new(SparseAggregator::neighbor_sum(&self.neighbors))
    }

    /// `D̂^{-1/2} (A + I) D̂^{-1/2}` as a sparse operator.
    pub fn gcn_operator(&self) -> Arc<SparseAggregator> {
        let deg: Vec<f64> = self.neighbors.iter().map(|ns| ns.len() as f64 + 1.0).collect();
        let rows = (0..self.node_count)
            .map(|v| {
                std::iter::once(v)
                    .chain(self.neighbors[v].iter().copied())
                    .map(|u| (u, 1.0 / (deg[v].sqrt() * deg[u].sqrt())))
                    .collect()
            })
            .collect();
        Arc::new(SparseAggregator::weighted(rows))
    }

    /// `src,dst` CSV with `src < dst`.
    pub fn to_edge_csv(&self) -> String {
        let mut s = String::from("src,dst\n");
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{a},{b}");
        }
        s
    }
}

/// Cosine similarity with zero-norm rows similar to nothing.
pub fn cosine_similarity(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm_a * norm_b)
}

/// Each node selects its `k` most similar other nodes (ties to the lower
/// index); selections are symmetrized by union.
pub fn build_knn_graph(profiles: &Matrix, k: usize) -> Result<EnterpriseGraph> {
    let n = profiles.rows();
    if n < 2 {
        return Err(Error::Config(format!("k-NN graph needs at least 2 nodes, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!("k = {k} must satisfy 1 <= k < n = {n}")));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| profiles.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().all(|&v| v == 0.0) {
        log::warn!("all {n} similarity profiles are zero; graph has no edges");
        return EnterpriseGraph::from_edges(n, std::iter::empty());
    }

    // a·b and b·a accumulate identical products in the same order, so both
    // directions of a pair see the same similarity.
    let mut pairs = Vec::with_capacity(n * k);
    let mut cand: Vec<usize> = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        for (j, s) in row.iter_mut().enumerate() {
            *s = cosine_similarity(profiles.row(i), profiles.row(j), norms[i], norms[j]);
        }
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i));
        let by_rank = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
        cand.select_nth_unstable_by(k - 1, by_rank);
        pairs.extend(cand[..k].iter().map(|&j| (i, j)));
    }
    EnterpriseGraph::from_edges(n, pairs)
}
