use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::numkernel::{DiffTensor, Tape, Var};

/// One GRU layer. Gate blocks are laid out `[reset | update | candidate]`
/// along the columns of `w` (`din × 3G`), `u` (`G × 3G`) and `b` (`3G`).
///
/// ```text
/// r = σ(x W_r + h U_r + b_r)
/// z = σ(x W_z + h U_z + b_z)
/// n = tanh(x W_n + (r ⊙ h) U_n + b_n)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w: DiffTensor,
    pub u: DiffTensor,
    pub b: DiffTensor,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GruLayerVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

impl GruLayer {
    pub fn init<R: Rng + ?Sized>(din: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: DiffTensor::glorot(din, 3 * hidden, rng),
            u: DiffTensor::glorot(hidden, 3 * hidden, rng),
            b: DiffTensor::zeros_param(vec![3 * hidden]),
            hidden,
        }
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        vec![&self.w, &self.u, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }

    pub fn bind(&self, tape: &mut Tape) -> GruLayerVars {
        GruLayerVars {
            w: tape.leaf(&self.w),
            u: tape.leaf(&self.u),
            b: tape.leaf(&self.b),
        }
    }
}

/// Stacked GRU over snapshot embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub layers: Vec<GruLayer>,
}

impl TemporalParams {
    pub fn init<R: Rng + ?Sized>(din: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| GruLayer::init(if l == 0 { din } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map(|l| l.hidden).unwrap_or(0)
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<GruLayerVars> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }
}

/// One GRU step for all rows of `x` (`n × din`) given state `h` (`n × G`).
pub fn gru_cell_tape(tape: &mut Tape, vars: &GruLayerVars, g: usize, x: Var, h: Var) -> Result<Var> {
    let xw = tape.matmul(x, vars.w)?;
    let xw = tape.add_row(xw, vars.b)?;
    let u_rz = tape.slice_cols(vars.u, 0, 2 * g)?;
    let u_n = tape.slice_cols(vars.u, 2 * g, 3 * g)?;
    let hu = tape.matmul(h, u_rz)?;
    let xw_rz = tape.slice_cols(xw, 0, 2 * g)?;
    let rz = tape.add(xw_rz, hu)?;
    let rz = tape.sigmoid(rz)?;
    let r = tape.slice_cols(rz, 0, g)?;
    let z = tape.slice_cols(rz, g, 2 * g)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, u_n)?;
    let xw_n = tape.slice_cols(xw, 2 * g, 3 * g)?;
    let cand = tape.add(xw_n, rhu)?;
    let cand = tape.tanh(cand)?;
    // h' = n + z ⊙ (h - n)
    let diff = tape.sub(h, cand)?;
    let zd = tape.mul(z, diff)?;
    tape.add(cand, zd)
}

/// Runs the stacked GRU over `xs` (each `n × din`) from zero state and
/// returns the top layer's final hidden state.
pub fn temporal_tape(
    tape: &mut Tape,
    params: &TemporalParams,
    vars: &[GruLayerVars],
    xs: &[Var],
    n: usize,
) -> Result<Var> {
    if xs.is_empty() {
        return Err(domain_err!("temporal aggregation needs at least one snapshot"));
    }
    let mut seq: Vec<Var> = xs.to_vec();
    for (layer, v) in params.layers.iter().zip(vars) {
        let mut h = tape.constant(vec![n, layer.hidden], vec![0.0; n * layer.hidden])?;
        let mut out = Vec::with_capacity(seq.len());
        for &x in &seq {
            h = gru_cell_tape(tape, v, layer.hidden, x, h)?;
            out.push(h);
        }
        seq = out;
    }
    Ok(*seq.last().expect("nonempty"))
}

/// Final GRU state per node for a list of `n × din` snapshot embeddings.
pub fn temporal_aggregate(snapshots: &[Vec<f64>], n: usize, params: &TemporalParams) -> Result<Vec<f64>> {
    let din = params.layers.first().map(|l| l.w.rows()).unwrap_or(0);
    if let Some(bad) = snapshots.iter().find(|s| s.len() != n * din) {
        return Err(domain_err!(
            "snapshot holds {} values, expected {} nodes × {din}",
            bad.len(),
            n
        ));
    }
    let mut tape = Tape::new();
    let xs: Vec<Var> = snapshots
        .iter()
        .map(|s| tape.constant(vec![n, din], s.clone()))
        .collect::<Result<_>>()?;
    let vars = params.bind(&mut tape);
    let c = temporal_tape(&mut tape, params, &vars, &xs, n)?;
    Ok(tape.value(c).to_vec())
}
