use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};

/// Column names of the six institution features, in storage order.
pub const NODE_FEATURE_NAMES: [&str; 6] = [
    "total_assets",
    "tier1",
    "npl",
    "lcr",
    "fraud_rate",
    "sar_rate",
];
pub const NODE_FEATURES: usize = 6;
pub const FEATURE_ASSETS: usize = 0;
pub const FEATURE_NPL: usize = 2;
pub const FEATURE_FRAUD: usize = 4;
pub const FEATURE_SAR: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstitutionNode {
    pub id: usize,
    /// Raw values in [`NODE_FEATURE_NAMES`] order. Ratios and rates lie in
    /// `[0, 1]`; normalisation happens when model inputs are built.
    pub features: [f64; NODE_FEATURES],
    pub label: Option<bool>,
}

impl InstitutionNode {
    pub fn sar_rate(&self) -> f64 {
        self.features[FEATURE_SAR]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    pub exposure: f64,
    /// Co-occurrence frequencies, one per window (shortest first).
    pub features: Vec<f64>,
}

impl DirectedEdge {
    pub fn mean_feature(&self) -> f64 {
        if self.features.is_empty() {
            0.0
        } else {
            self.features.iter().sum::<f64>() / self.features.len() as f64
        }
    }
}

/// One snapshot of the directed, weighted interbank network. Node ids equal
/// their position in `nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterbankGraph {
    nodes: Vec<InstitutionNode>,
    edges: Vec<DirectedEdge>,
    timestamp: i64,
}

impl InterbankGraph {
    pub fn new(nodes: Vec<InstitutionNode>, edges: Vec<DirectedEdge>, timestamp: i64) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(domain_err!("node at position {i} has id {}", n.id));
            }
            if n.features.iter().any(|v| !v.is_finite()) {
                return Err(domain_err!("node {i} has non-finite features"));
            }
        }
        let width = edges.first().map(|e| e.features.len()).unwrap_or(0);
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.src >= nodes.len() || e.dst >= nodes.len() {
                return Err(domain_err!("edge {}->{} references a missing node", e.src, e.dst));
            }
            if e.src == e.dst {
                return Err(domain_err!("self edge on node {}", e.src));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(domain_err!("duplicate edge {}->{}", e.src, e.dst));
            }
            if !(e.exposure >= 0.0 && e.exposure.is_finite()) {
                return Err(domain_err!("edge {}->{} has exposure {}", e.src, e.dst, e.exposure));
            }
            if e.features.len() != width {
                return Err(domain_err!("edges carry feature vectors of different lengths"));
            }
            if e.features.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(domain_err!("edge {}->{} has a feature outside [0, 1]", e.src, e.dst));
            }
        }
        Ok(Self {
            nodes,
            edges,
            timestamp,
        })
    }

    pub fn nodes(&self) -> &[InstitutionNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_feature_dim(&self) -> usize {
        self.edges.first().map(|e| e.features.len()).unwrap_or(0)
    }

    /// Labels with missing entries read as negative.
    pub fn labels(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.label.unwrap_or(false)).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.dst] += 1;
        }
        d
    }

    /// Indices of edges entering each node, in edge order.
    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.dst].push(i);
        }
        out
    }

    /// Same graph with the edge list replaced; topology checks rerun.
    pub fn with_edges(&self, edges: Vec<DirectedEdge>) -> Result<Self> {
        Self::new(self.nodes.clone(), edges, self.timestamp)
    }

    pub fn with_nodes(&self, nodes: Vec<InstitutionNode>) -> Result<Self> {
        Self::new(nodes, self.edges.clone(), self.timestamp)
    }

    /// Node ids relabelled by `perm` (node `i` becomes `perm[i]`).
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.nodes.len() {
            return Err(domain_err!("permutation of length {} for {} nodes", perm.len(), self.nodes.len()));
        }
        let mut nodes = self.nodes.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            let mut m = n.clone();
            m.id = perm[i];
            nodes[perm[i]] = m;
        }
        let edges = self
            .edges
            .iter()
            .map(|e| DirectedEdge {
                src: perm[e.src],
                dst: perm[e.dst],
                ..e.clone()
            })
            .collect();
        Self::new(nodes, edges, self.timestamp)
    }
}
