use log::warn;
use serde::{Deserialize, Serialize};

use super::graph::InterbankGraph;
use crate::error::{domain_err, Result};

/// Edge weight used for the PageRank transition matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PagerankWeighting {
    Unweighted,
    Exposure,
    /// Mean of the edge's co-occurrence window features.
    #[default]
    Cooccurrence,
}

#[derive(Clone, Debug)]
pub struct PagerankOutcome {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// PageRank on the co-occurrence-weighted graph.
pub fn pagerank(g: &InterbankGraph, damping: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    pagerank_weighted(g, PagerankWeighting::Cooccurrence, damping, tol, max_iter).map(|o| o.scores)
}

pub fn pagerank_weighted(
    g: &InterbankGraph,
    weighting: PagerankWeighting,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PagerankOutcome> {
    let edges: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .map(|e| {
            let w = match weighting {
                PagerankWeighting::Unweighted => 1.0,
                PagerankWeighting::Exposure => e.exposure,
                PagerankWeighting::Cooccurrence => e.mean_feature(),
            };
            (e.src, e.dst, w)
        })
        .collect();
    pagerank_edges(g.n_nodes(), &edges, damping, tol, max_iter)
}

/// Power iteration over a weighted edge list. Nodes whose outgoing weight
/// is zero are dangling and spread their mass uniformly.
pub fn pagerank_edges(
    n: usize,
    edges: &[(usize, usize, f64)],
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PagerankOutcome> {
    if n == 0 {
        return Err(domain_err!("pagerank of an empty graph"));
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(domain_err!("damping {damping} outside (0, 1)"));
    }
    let mut out_w = vec![0.0; n];
    for &(s, d, w) in edges {
        if s >= n || d >= n {
            return Err(domain_err!("edge {s}->{d} outside {n} nodes"));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(domain_err!("edge {s}->{d} has weight {w}"));
        }
        out_w[s] += w;
    }

    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&i| out_w[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        next.iter_mut().for_each(|v| *v = base);
        for &(s, d, w) in edges {
            if out_w[s] > 0.0 {
                next[d] += damping * x[s] * w / out_w[s];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            break;
        }
    }
    let converged = residual < tol;
    if !converged {
        warn!("pagerank stopped after {iterations} iterations with L1 change {residual:e}");
    }
    Ok(PagerankOutcome {
        scores: x,
        iterations,
        residual,
        converged,
    })
}
