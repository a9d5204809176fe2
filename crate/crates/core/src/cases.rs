//! Assembly of review cases from a trained Track B run: case selection,
//! counterparty context, a transaction history per institution and the
//! report metadata.

use serde::{Deserialize, Serialize};

use crate::attribution::{CaseInputs, Counterparty};
use crate::error::{domain_err, Result};
use crate::graphcore::InterbankGraph;
use crate::sargen::{CaseMetadata, DateRange};
use crate::seqmodel::{planted_sequences, PlantedConfig, TxSequence};

/// First quarter of the snapshot calendar.
pub const BASE_YEAR: i64 = 2009;

pub const ACTIVITY_TYPE: &str = "interbank fraud contagion";

/// Indices of the `k` highest scores, ties broken by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `(first day, last day)` of quarter `q` counted from the base year.
pub fn quarter_bounds(q: i64) -> (String, String) {
    let year = BASE_YEAR + q.div_euclid(4);
    let k = q.rem_euclid(4);
    let (sm, em, ed) = [(1, 3, 31), (4, 6, 30), (7, 9, 30), (10, 12, 31)][k as usize];
    (format!("{year:04}-{sm:02}-01"), format!("{year:04}-{em:02}-{ed:02}"))
}

/// A synthetic transaction history for one institution, drawn from the
/// planted-pattern generator with the institution's label deciding whether
/// a burst is planted.
pub fn institution_sequence(base: &PlantedConfig, seed: u64, node: usize, label: bool) -> TxSequence {
    let cfg = PlantedConfig {
        n_sequences: 1,
        positive_rate: if label { 1.0 } else { 0.0 },
        seed: seed ^ (node as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ..base.clone()
    };
    let mut s = planted_sequences(&cfg).remove(0);
    s.account = subject_id(node);
    s
}

pub fn subject_id(node: usize) -> String {
    format!("INST-{node:05}")
}

/// Case inputs for `node` in the last snapshot: every in-edge `u → node` is
/// a counterparty carrying its co-occurrence value at `window`.
pub fn case_inputs(
    graph: &InterbankGraph,
    embeddings: &[f64],
    dim: usize,
    node: usize,
    window: usize,
    sequence: TxSequence,
) -> Result<CaseInputs> {
    let n = graph.n_nodes();
    if node >= n || embeddings.len() != n * dim {
        return Err(domain_err!("case node {node} or embedding size {} invalid for {n} nodes", embeddings.len()));
    }
    let row = |i: usize| embeddings[i * dim..(i + 1) * dim].to_vec();
    let counterparties = graph
        .edges()
        .iter()
        .filter(|e| e.dst == node)
        .map(|e| {
            let f = *e
                .features
                .get(window)
                .ok_or_else(|| domain_err!("edge has no co-occurrence window {window}"))?;
            Ok(Counterparty {
                node: e.src,
                embedding: row(e.src),
                f,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CaseInputs {
        case_id: format!("case-{node:05}"),
        node,
        sequence,
        embedding: row(node),
        counterparties,
    })
}

/// Ground-truth report fields for `node`: inbound and outbound exposure
/// totals and the calendar span of the snapshots.
pub fn case_metadata(graphs: &[InterbankGraph], node: usize) -> Result<CaseMetadata> {
    let (first, last) = match (graphs.first(), graphs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(domain_err!("no snapshots")),
    };
    let cents = |x: f64| (x * 100.0).round() / 100.0;
    let inbound: f64 = last.edges().iter().filter(|e| e.dst == node).map(|e| e.exposure).sum();
    let outbound: f64 = last.edges().iter().filter(|e| e.src == node).map(|e| e.exposure).sum();
    Ok(CaseMetadata {
        subject_id: Some(subject_id(node)),
        activity_type: Some(ACTIVITY_TYPE.to_string()),
        amounts: Some(vec![cents(inbound), cents(outbound)]),
        date_range: Some(DateRange {
            start: quarter_bounds(first.timestamp()).0,
            end: quarter_bounds(last.timestamp()).1,
        }),
    })
}

/// Serializable identity of a selected case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSelection {
    pub node: usize,
    pub score: f64,
    pub label: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthnet::{generate_snapshots, SynthConfig};

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.2, 0.9, 0.9, 0.1], 3), vec![1, 2, 0]);
        assert_eq!(top_k(&[0.5], 4), vec![0]);
    }

    #[test]
    fn quarters_map_to_calendar_dates() {
        assert_eq!(quarter_bounds(0), ("2009-01-01".into(), "2009-03-31".into()));
        assert_eq!(quarter_bounds(5), ("2010-04-01".into(), "2010-06-30".into()));
        assert_eq!(quarter_bounds(57), ("2023-04-01".into(), "2023-06-30".into()));
    }

    #[test]
    fn case_inputs_collect_in_edges() {
        let cfg = SynthConfig {
            n_institutions: 30,
            n_edges: 120,
            seed: 3,
            ..SynthConfig::default()
        };
        let graphs = generate_snapshots(&cfg, 2, 0.0).unwrap();
        let g = graphs.last().unwrap();
        let dim = 2;
        let emb: Vec<f64> = (0..30 * dim).map(|i| i as f64).collect();
        let node = g.edges()[0].dst;
        let seq = institution_sequence(&PlantedConfig::default(), 1, node, true);
        let c = case_inputs(g, &emb, dim, node, 0, seq).unwrap();
        let expect: Vec<usize> = g.edges().iter().filter(|e| e.dst == node).map(|e| e.src).collect();
        assert_eq!(c.counterparties.iter().map(|cp| cp.node).collect::<Vec<_>>(), expect);
        assert_eq!(c.embedding, vec![(node * 2) as f64, (node * 2 + 1) as f64]);
        let meta = case_metadata(&graphs, node).unwrap();
        assert_eq!(meta.date_range.unwrap().end, "2009-06-30");
        assert_eq!(meta.amounts.unwrap().len(), 2);
    }

    #[test]
    fn institution_sequences_are_deterministic() {
        let a = institution_sequence(&PlantedConfig::default(), 4, 12, true);
        assert_eq!(a, institution_sequence(&PlantedConfig::default(), 4, 12, true));
        assert!(a.label);
        assert!(!institution_sequence(&PlantedConfig::default(), 4, 12, false).label);
        assert_ne!(a.steps, institution_sequence(&PlantedConfig::default(), 4, 13, true).steps);
    }
}
