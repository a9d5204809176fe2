use std::io::{Read, Write};

use super::graph::{DirectedEdge, InstitutionNode, InterbankGraph, NODE_FEATURES, NODE_FEATURE_NAMES};
use crate::error::{Result, ScafdsError};

const EDGE_HEADER: [&str; 6] = ["src", "dst", "exposure", "f90", "f180", "f365"];

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| ScafdsError::Schema(format!("line {line}: cannot parse {what} from {field:?}")))
}

fn parse_usize(field: &str, what: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| ScafdsError::Schema(format!("line {line}: cannot parse {what} from {field:?}")))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| ScafdsError::Schema(format!("missing column {name}")))
}

/// Reads `id,total_assets,tier1,npl,lcr,fraud_rate,sar_rate[,label]`.
/// Ids must cover `0..n`; rows may appear in any order.
pub fn read_nodes_csv<R: Read>(reader: R) -> Result<Vec<InstitutionNode>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "id")?;
    let feat_cols: Vec<usize> = NODE_FEATURE_NAMES
        .iter()
        .map(|n| column(&headers, n))
        .collect::<Result<_>>()?;
    let label_col = headers.iter().position(|h| h.trim() == "label");

    let mut nodes = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id = parse_usize(&rec[id_col], "id", line)?;
        let mut features = [0.0; NODE_FEATURES];
        for (f, &c) in features.iter_mut().zip(&feat_cols) {
            *f = parse_f64(&rec[c], "feature", line)?;
        }
        let label = match label_col.map(|c| rec[c].trim().to_string()) {
            None => None,
            Some(s) if s.is_empty() => None,
            Some(s) => Some(match s.as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(ScafdsError::Schema(format!("line {line}: label {s:?}"))),
            }),
        };
        nodes.push(InstitutionNode { id, features, label });
    }
    nodes.sort_by_key(|n| n.id);
    for (i, n) in nodes.iter().enumerate() {
        if n.id != i {
            return Err(ScafdsError::Schema(format!("node ids must cover 0..{}", nodes.len())));
        }
    }
    Ok(nodes)
}

/// Reads `src,dst,exposure,f90,f180,f365`.
pub fn read_edges_csv<R: Read>(reader: R) -> Result<Vec<DirectedEdge>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = EDGE_HEADER.iter().map(|n| column(&headers, n)).collect::<Result<_>>()?;
    let mut edges = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        edges.push(DirectedEdge {
            src: parse_usize(&rec[cols[0]], "src", line)?,
            dst: parse_usize(&rec[cols[1]], "dst", line)?,
            exposure: parse_f64(&rec[cols[2]], "exposure", line)?,
            features: (3..6)
                .map(|c| parse_f64(&rec[cols[c]], EDGE_HEADER[c], line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(edges)
}

pub fn read_graph<R1: Read, R2: Read>(nodes: R1, edges: R2, timestamp: i64) -> Result<InterbankGraph> {
    InterbankGraph::new(read_nodes_csv(nodes)?, read_edges_csv(edges)?, timestamp)
}

pub fn write_nodes_csv<W: Write>(g: &InterbankGraph, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id"];
    header.extend(NODE_FEATURE_NAMES);
    header.push("label");
    w.write_record(&header)?;
    for n in g.nodes() {
        let mut rec = vec![n.id.to_string()];
        rec.extend(n.features.iter().map(|v| v.to_string()));
        rec.push(match n.label {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges_csv<W: Write>(g: &InterbankGraph, writer: W) -> Result<()> {
    if g.n_edges() > 0 && g.edge_feature_dim() != 3 {
        return Err(ScafdsError::Schema(format!(
            "edge file stores three windows, graph has {}",
            g.edge_feature_dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EDGE_HEADER)?;
    for e in g.edges() {
        let mut rec = vec![e.src.to_string(), e.dst.to_string(), e.exposure.to_string()];
        rec.extend(e.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
