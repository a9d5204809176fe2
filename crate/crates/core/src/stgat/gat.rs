use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graphcore::{InterbankGraph, NODE_FEATURES};
use crate::numkernel::{DiffTensor, Tape, Var};
use crate::synthnet::normalized_node_features;

/// How attention scores are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Scores see both endpoint projections and the edge feature vector.
    #[default]
    EdgeAware,
    /// Scores see only the endpoint projections.
    NodeOnly,
    /// Every in-neighbour gets weight `1 / in-degree` (mean aggregation).
    Uniform,
}

/// One snapshot in model-ready form.
#[derive(Clone, Debug)]
pub struct SnapshotInput {
    pub n: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub has_in: Arc<[bool]>,
    /// `n × in_dim`, row-major.
    pub x: Vec<f64>,
    pub in_dim: usize,
    /// `E × edge_dim`, row-major.
    pub e: Vec<f64>,
    pub edge_dim: usize,
}

impl SnapshotInput {
    pub fn new(n: usize, edges: &[(usize, usize)], x: Vec<f64>, in_dim: usize, e: Vec<f64>, edge_dim: usize) -> Result<Self> {
        if x.len() != n * in_dim {
            return Err(shape_err!("node features hold {} values, expected {}", x.len(), n * in_dim));
        }
        if e.len() != edges.len() * edge_dim {
            return Err(shape_err!("edge features hold {} values, expected {}", e.len(), edges.len() * edge_dim));
        }
        let mut has_in = vec![false; n];
        for &(s, d) in edges {
            if s >= n || d >= n {
                return Err(shape_err!("edge {s}->{d} outside {n} nodes"));
            }
            has_in[d] = true;
        }
        Ok(Self {
            n,
            src: edges.iter().map(|p| p.0).collect(),
            dst: edges.iter().map(|p| p.1).collect(),
            has_in: Arc::from(has_in),
            x,
            in_dim,
            e,
            edge_dim,
        })
    }

    /// Normalised node features and raw window features of a graph.
    pub fn from_graph(g: &InterbankGraph) -> Result<Self> {
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
        let de = g.edge_feature_dim();
        let e: Vec<f64> = g.edges().iter().flat_map(|e| e.features.iter().copied()).collect();
        Self::new(g.n_nodes(), &edges, normalized_node_features(g), NODE_FEATURES, e, de)
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &t in self.dst.iter() {
            d[t] += 1;
        }
        d
    }
}

/// Parameters of one multi-head attention layer. Heads are stored side by
/// side: `w` is `din × (H·D)`, `a` is `H × (2D + de)` with the destination,
/// source and edge slots in that order, and the optional `we` (`de × H·D`)
/// adds a projection of the edge features to each message. With `pe`
/// (`de × H·de`) each head scores its own projection of the edge features
/// instead of the shared raw vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub w: DiffTensor,
    pub a: DiffTensor,
    pub we: Option<DiffTensor>,
    pub pe: Option<DiffTensor>,
    pub heads: usize,
    pub head_dim: usize,
    pub edge_dim: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
}

/// Tape handles for a bound [`GatLayerParams`].
#[derive(Clone, Copy, Debug)]
pub struct GatLayerVars {
    pub w: Var,
    pub a: Var,
    pub we: Option<Var>,
    pub pe: Option<Var>,
}

impl GatLayerVars {
    pub fn list(&self) -> Vec<Var> {
        let mut v = vec![self.w, self.a];
        v.extend(self.we);
        v.extend(self.pe);
        v
    }
}

impl GatLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        din: usize,
        heads: usize,
        head_dim: usize,
        edge_dim: usize,
        edge_messages: bool,
        edge_projection: bool,
        leaky_slope: f64,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Self {
        let hd = heads * head_dim;
        let a_std = (2.0 / (2 * head_dim + edge_dim + 1) as f64).sqrt();
        Self {
            w: DiffTensor::glorot(din, hd, rng),
            a: DiffTensor::randn(vec![heads, 2 * head_dim + edge_dim], a_std, rng),
            we: edge_messages.then(|| DiffTensor::glorot(edge_dim.max(1), hd, rng)),
            pe: edge_projection.then(|| DiffTensor::glorot(edge_dim.max(1), heads * edge_dim.max(1), rng)),
            heads,
            head_dim,
            edge_dim,
            leaky_slope,
            dropout_rate,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        let mut v = vec![&self.w, &self.a];
        v.extend(self.we.as_ref());
        v.extend(self.pe.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut v = vec![&mut self.w, &mut self.a];
        v.extend(self.we.as_mut());
        v.extend(self.pe.as_mut());
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> GatLayerVars {
        GatLayerVars {
            w: tape.leaf(&self.w),
            a: tape.leaf(&self.a),
            we: self.we.as_ref().map(|t| tape.leaf(t)),
            pe: self.pe.as_ref().map(|t| tape.leaf(t)),
        }
    }
}

/// Per-edge attention (`E × H`) and the projected node states `W·h`.
pub fn attention_tape(
    tape: &mut Tape,
    p: &GatLayerParams,
    vars: &GatLayerVars,
    snap: &SnapshotInput,
    h: Var,
    e: Var,
    mode: AttentionMode,
) -> Result<(Var, Var)> {
    let (hn, d) = (p.heads, p.head_dim);
    let wh = tape.matmul(h, vars.w)?;
    if mode == AttentionMode::Uniform {
        let deg = snap.in_degrees();
        let vals: Vec<f64> = snap
            .dst
            .iter()
            .flat_map(|&t| std::iter::repeat_n(1.0 / deg[t] as f64, hn))
            .collect();
        let alpha = tape.constant(vec![snap.n_edges(), hn], vals)?;
        return Ok((alpha, wh));
    }
    // per-node halves of the score, gathered onto edges afterwards
    let a_dst = tape.slice_cols(vars.a, 0, d)?;
    let a_src = tape.slice_cols(vars.a, d, 2 * d)?;
    let node_dst = tape.head_dot(wh, a_dst)?;
    let node_src = tape.head_dot(wh, a_src)?;
    let s_dst = tape.gather_rows(node_dst, snap.dst.clone())?;
    let s_src = tape.gather_rows(node_src, snap.src.clone())?;
    let mut score = tape.add(s_dst, s_src)?;
    if mode == AttentionMode::EdgeAware && p.edge_dim > 0 {
        let a_e = tape.slice_cols(vars.a, 2 * d, 2 * d + p.edge_dim)?;
        let s_e = match vars.pe {
            Some(pe) => {
                let ep = tape.matmul(e, pe)?;
                tape.head_dot(ep, a_e)?
            }
            None => {
                let a_e_t = tape.transpose(a_e)?;
                tape.matmul(e, a_e_t)?
            }
        };
        score = tape.add(score, s_e)?;
    }
    let logits = tape.leaky_relu(score, p.leaky_slope)?;
    let alpha = tape.segment_softmax(logits, snap.dst.clone(), snap.n)?;
    Ok((alpha, wh))
}

/// One propagation step. Nodes without in-edges keep their own projection.
/// Returns the post-activation node states and the attention weights.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer_tape(
    tape: &mut Tape,
    p: &GatLayerParams,
    vars: &GatLayerVars,
    snap: &SnapshotInput,
    h: Var,
    e: Var,
    mode: AttentionMode,
    use_edge_messages: bool,
    dropout_mask: Option<Arc<[f64]>>,
) -> Result<(Var, Var)> {
    let h = match dropout_mask {
        Some(mask) => tape.mul_const(h, mask)?,
        None => h,
    };
    let (alpha, wh) = attention_tape(tape, p, vars, snap, h, e, mode)?;
    let mut msg = tape.gather_rows(wh, snap.src.clone())?;
    if use_edge_messages && mode != AttentionMode::Uniform {
        if let Some(we) = vars.we {
            let em = tape.matmul(e, we)?;
            msg = tape.add(msg, em)?;
        }
    }
    let weighted = tape.head_scale(alpha, msg)?;
    let agg = tape.scatter_add_rows(weighted, snap.dst.clone(), snap.n)?;
    let mixed = tape.select_rows(snap.has_in.clone(), agg, wh)?;
    Ok((tape.elu(mixed, 1.0)?, alpha))
}

/// Inverted-dropout mask for an `rows × cols` input.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Option<Arc<[f64]>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..rows * cols).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
}

/// Attention coefficients `E × H` for node states `h` (`n × din`).
pub fn attention_coefficients(
    snap: &SnapshotInput,
    h: &[f64],
    params: &GatLayerParams,
    mode: AttentionMode,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let din = params.w.rows();
    let hv = tape.constant(vec![snap.n, din], h.to_vec())?;
    let ev = tape.constant(vec![snap.n_edges(), snap.edge_dim], snap.e.clone())?;
    let vars = params.bind(&mut tape);
    let (alpha, _) = attention_tape(&mut tape, params, &vars, snap, hv, ev, mode)?;
    Ok(tape.value(alpha).to_vec())
}

/// Runs a stack of layers without dropout; returns `n × out_dim` states.
pub fn gat_forward(
    snap: &SnapshotInput,
    layers: &[&GatLayerParams],
    mode: AttentionMode,
    use_edge_messages: bool,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut h = tape.constant(vec![snap.n, snap.in_dim], snap.x.clone())?;
    let e = tape.constant(vec![snap.n_edges(), snap.edge_dim], snap.e.clone())?;
    for p in layers {
        let vars = p.bind(&mut tape);
        h = gat_layer_tape(&mut tape, p, &vars, snap, h, e, mode, use_edge_messages, None)?.0;
    }
    Ok(tape.value(h).to_vec())
}
