//! Interbank graph model, centrality and bilateral exposure estimation.

mod graph;
mod io;
mod pagerank;
mod ras;
mod shuffle;

pub use graph::{
    DirectedEdge, InstitutionNode, InterbankGraph, FEATURE_ASSETS, FEATURE_FRAUD, FEATURE_NPL, FEATURE_SAR,
    NODE_FEATURES, NODE_FEATURE_NAMES,
};
pub use io::{read_edges_csv, read_graph, read_nodes_csv, write_edges_csv, write_nodes_csv};
pub use pagerank::{pagerank, pagerank_edges, pagerank_weighted, PagerankOutcome, PagerankWeighting};
pub use ras::{ras_estimate, ras_with_prior, ExposureMatrix, RasOutcome};
pub use shuffle::{edge_permutation, invert_permutation, permute_edge_features, shuffle_edge_features};
