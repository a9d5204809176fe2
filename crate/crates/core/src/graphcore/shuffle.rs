use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::InterbankGraph;
use crate::error::{domain_err, Result};

/// Seeded permutation of `0..n`.
pub fn edge_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    perm
}

/// Edge `i` receives the feature vector of edge `perm[i]`; topology and
/// exposures stay where they are.
pub fn permute_edge_features(g: &InterbankGraph, perm: &[usize]) -> Result<InterbankGraph> {
    let n = g.n_edges();
    if perm.len() != n {
        return Err(domain_err!("permutation of length {} for {n} edges", perm.len()));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(domain_err!("not a permutation of 0..{n}"));
        }
    }
    let src = g.edges();
    let edges = src
        .iter()
        .zip(perm)
        .map(|(e, &p)| {
            let mut e = e.clone();
            e.features = src[p].features.clone();
            e
        })
        .collect();
    g.with_edges(edges)
}

/// Randomised-edge control: edge features are reassigned across pairs by a
/// seeded permutation, preserving their marginal distribution.
pub fn shuffle_edge_features(g: &InterbankGraph, seed: u64) -> InterbankGraph {
    let perm = edge_permutation(g.n_edges(), seed);
    permute_edge_features(g, &perm).expect("seeded permutation is valid")
}

/// Inverse of a permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
