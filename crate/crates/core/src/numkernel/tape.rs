//! Reverse-mode differentiation over dense row-major tensors.
//!
//! Every operation appends a node to the [`Tape`]; node inputs always
//! precede the node, so the node list is a topological order and a single
//! reverse sweep computes all gradients. Forward values are produced by one
//! evaluation routine shared by the builders and by [`Tape::replay`], which
//! makes replays bit-exact.

use std::sync::Arc;

use super::tensor::{dims2, numel, DiffTensor};
use crate::error::{shape_err, Result, ScafdsError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Elu(f64),
    Relu,
    Exp,
    Ln,
    Square,
    Powf(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[r×c] + [c]` broadcast over rows.
    AddRow(Var, Var),
    /// `[r×c] * [r×1]` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Row sums, `[r×c] -> [r×1]`.
    SumCols(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>, usize),
    /// Column-wise softmax within groups of rows sharing a segment id.
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    /// `alpha [E×H]` scales each `D`-wide head block of `msg [E×H·D]`.
    HeadScale(Var, Var),
    /// Per-head dot product, `x [E×H·D]`, `a [H×D]` -> `[E×H]`.
    HeadDot(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Row `i` from the first input when `mask[i]`, else from the second.
    SelectRows(Arc<[bool]>, Var, Var),
    MulConst(Var, Arc<[f64]>),
    AddConst(Var, Arc<[f64]>),
    Reshape(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g [m×n] · bᵀ` where `b` is `[k×n]`.
fn mm_nt(g: &[f64], m: usize, n: usize, b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`.
fn mm_tn(a: &[f64], m: usize, k: usize, g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Sigmoid => sigmoid_scalar(x),
        Unary::Tanh => x.tanh(),
        Unary::LeakyRelu(s) => {
            if x >= 0.0 {
                x
            } else {
                s * x
            }
        }
        Unary::Elu(a) => {
            if x > 0.0 {
                x
            } else {
                a * x.exp_m1()
            }
        }
        Unary::Relu => x.max(0.0),
        Unary::Exp => x.exp(),
        Unary::Ln => x.ln(),
        Unary::Square => x * x,
        Unary::Powf(p) => x.powf(p),
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
    }
}

fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Tanh => 1.0 - y * y,
        Unary::LeakyRelu(s) => {
            if x >= 0.0 {
                1.0
            } else {
                s
            }
        }
        Unary::Elu(a) => {
            if x > 0.0 {
                1.0
            } else {
                y + a
            }
        }
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Exp => y,
        Unary::Ln => 1.0 / x,
        Unary::Square => 2.0 * x,
        Unary::Powf(p) => {
            if x == 0.0 {
                if p == 1.0 {
                    1.0
                } else if p > 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                p * x.powf(p - 1.0)
            }
        }
        Unary::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf tensor; gradients are tracked when the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &DiffTensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = DiffTensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> DiffTensor {
        DiffTensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("node value matches its shape")
    }

    /// Overwrites a leaf's values; call [`Tape::replay`] to propagate.
    pub fn set_leaf_values(&mut self, v: Var, values: &[f64]) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(ScafdsError::Domain("only leaves can be overwritten".into()));
        }
        if node.value.len() != values.len() {
            return Err(shape_err!(
                "leaf holds {} values, got {}",
                node.value.len(),
                values.len()
            ));
        }
        node.value.copy_from_slice(values);
        Ok(())
    }

    /// Recomputes every non-leaf value from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (shape, value) = self.eval(&op)?;
            if !matches!(op, Op::Reshape(_)) {
                self.nodes[i].shape = shape;
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn d2(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (shape, value) = self.eval(&op)?;
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::HeadScale(a, b)
            | Op::HeadDot(a, b)
            | Op::SelectRows(_, a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Unary(a, _)
            | Op::SoftmaxRows(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SumCols(a)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _, _)
            | Op::SegmentSoftmax(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::MulConst(a, _)
            | Op::AddConst(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.node(a).value.len() != self.node(b).value.len() || self.d2(a) != self.d2(b) {
            return Err(shape_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.node(a).shape,
                self.node(b).shape
            ));
        }
        Ok(())
    }

    fn eval(&self, op: &Op) -> Result<(Vec<usize>, Vec<f64>)> {
        match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => {
                let (m, k) = self.d2(*a);
                let (k2, n) = self.d2(*b);
                if k != k2 {
                    return Err(shape_err!(
                        "matmul inner dimensions differ: {:?} x {:?}",
                        self.node(*a).shape,
                        self.node(*b).shape
                    ));
                }
                Ok((vec![m, n], mm(&self.node(*a).value, m, k, &self.node(*b).value, n)))
            }
            Op::Transpose(a) => {
                let (r, c) = self.d2(*a);
                let x = &self.node(*a).value;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = x[i * c + j];
                    }
                }
                Ok((vec![c, r], out))
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.same_shape(*a, *b, "elementwise op")?;
                let x = &self.node(*a).value;
                let y = &self.node(*b).value;
                let out: Vec<f64> = match op {
                    Op::Add(..) => x.iter().zip(y).map(|(p, q)| p + q).collect(),
                    Op::Sub(..) => x.iter().zip(y).map(|(p, q)| p - q).collect(),
                    _ => x.iter().zip(y).map(|(p, q)| p * q).collect(),
                };
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::AddRow(a, b) => {
                let (r, c) = self.d2(*a);
                if self.node(*b).value.len() != c {
                    return Err(shape_err!(
                        "row broadcast of {:?} onto {:?}",
                        self.node(*b).shape,
                        self.node(*a).shape
                    ));
                }
                let x = &self.node(*a).value;
                let bias = &self.node(*b).value;
                let mut out = x.clone();
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] += bias[j];
                    }
                }
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::MulCol(a, s) => {
                let (r, c) = self.d2(*a);
                if self.node(*s).value.len() != r {
                    return Err(shape_err!(
                        "column broadcast of {:?} onto {:?}",
                        self.node(*s).shape,
                        self.node(*a).shape
                    ));
                }
                let x = &self.node(*a).value;
                let sv = &self.node(*s).value;
                let mut out = x.clone();
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] *= sv[i];
                    }
                }
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::Scale(a, k) => Ok((
                self.node(*a).shape.clone(),
                self.node(*a).value.iter().map(|x| x * k).collect(),
            )),
            Op::AddScalar(a, k) => Ok((
                self.node(*a).shape.clone(),
                self.node(*a).value.iter().map(|x| x + k).collect(),
            )),
            Op::Unary(a, kind) => {
                let x = &self.node(*a).value;
                if matches!(kind, Unary::Ln) && x.iter().any(|&v| v <= 0.0) {
                    return Err(ScafdsError::Numeric("logarithm of a non-positive value".into()));
                }
                if matches!(kind, Unary::Powf(_)) && x.iter().any(|&v| v < 0.0) {
                    return Err(ScafdsError::Numeric("fractional power of a negative value".into()));
                }
                Ok((
                    self.node(*a).shape.clone(),
                    x.iter().map(|&v| unary_forward(*kind, v)).collect(),
                ))
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = self.d2(*a);
                if c == 0 {
                    return Err(shape_err!("softmax over an empty axis"));
                }
                let x = &self.node(*a).value;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..c {
                        let e = (row[j] - mx).exp();
                        out[i * c + j] = e;
                        sum += e;
                    }
                    for j in 0..c {
                        out[i * c + j] /= sum;
                    }
                }
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::SumAll(a) => Ok((vec![1], vec![self.node(*a).value.iter().sum()])),
            Op::MeanAll(a) => {
                let x = &self.node(*a).value;
                if x.is_empty() {
                    return Err(shape_err!("mean of an empty tensor"));
                }
                Ok((vec![1], vec![x.iter().sum::<f64>() / x.len() as f64]))
            }
            Op::SumCols(a) => {
                let (r, c) = self.d2(*a);
                let x = &self.node(*a).value;
                Ok((
                    vec![r, 1],
                    (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect(),
                ))
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.d2(*a);
                let x = &self.node(*a).value;
                let mut out = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    if i >= r {
                        return Err(shape_err!("gather index {i} out of {r} rows"));
                    }
                    out.extend_from_slice(&x[i * c..(i + 1) * c]);
                }
                Ok((vec![idx.len(), c], out))
            }
            Op::ScatterAddRows(a, idx, n) => {
                let (r, c) = self.d2(*a);
                if idx.len() != r {
                    return Err(shape_err!("scatter with {} indices for {r} rows", idx.len()));
                }
                let x = &self.node(*a).value;
                let mut out = vec![0.0; n * c];
                for (e, &t) in idx.iter().enumerate() {
                    if t >= *n {
                        return Err(shape_err!("scatter target {t} out of {n} rows"));
                    }
                    for j in 0..c {
                        out[t * c + j] += x[e * c + j];
                    }
                }
                Ok((vec![*n, c], out))
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let (r, c) = self.d2(*a);
                if seg.len() != r {
                    return Err(shape_err!("segment softmax with {} ids for {r} rows", seg.len()));
                }
                let x = &self.node(*a).value;
                let mut mx = vec![f64::NEG_INFINITY; nseg * c];
                for (e, &s) in seg.iter().enumerate() {
                    if s >= *nseg {
                        return Err(shape_err!("segment id {s} out of {nseg}"));
                    }
                    for j in 0..c {
                        let v = x[e * c + j];
                        if v > mx[s * c + j] {
                            mx[s * c + j] = v;
                        }
                    }
                }
                let mut out = vec![0.0; r * c];
                let mut sum = vec![0.0; nseg * c];
                for (e, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        let v = (x[e * c + j] - mx[s * c + j]).exp();
                        out[e * c + j] = v;
                        sum[s * c + j] += v;
                    }
                }
                for (e, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        out[e * c + j] /= sum[s * c + j];
                    }
                }
                Ok((vec![r, c], out))
            }
            Op::HeadScale(alpha, msg) => {
                let (e, h) = self.d2(*alpha);
                let (e2, hd) = self.d2(*msg);
                if e != e2 || h == 0 || hd % h != 0 {
                    return Err(shape_err!(
                        "head scaling of {:?} by {:?}",
                        self.node(*msg).shape,
                        self.node(*alpha).shape
                    ));
                }
                let d = hd / h;
                let a = &self.node(*alpha).value;
                let m = &self.node(*msg).value;
                let mut out = m.clone();
                for i in 0..e {
                    for k in 0..h {
                        let w = a[i * h + k];
                        for q in 0..d {
                            out[i * hd + k * d + q] *= w;
                        }
                    }
                }
                Ok((vec![e, hd], out))
            }
            Op::HeadDot(x, a) => {
                let (e, hd) = self.d2(*x);
                let (h, d) = self.d2(*a);
                if h * d != hd {
                    return Err(shape_err!(
                        "head dot of {:?} with {:?}",
                        self.node(*x).shape,
                        self.node(*a).shape
                    ));
                }
                let xv = &self.node(*x).value;
                let av = &self.node(*a).value;
                let mut out = vec![0.0; e * h];
                for i in 0..e {
                    for k in 0..h {
                        let mut s = 0.0;
                        for q in 0..d {
                            s += xv[i * hd + k * d + q] * av[k * d + q];
                        }
                        out[i * h + k] = s;
                    }
                }
                Ok((vec![e, h], out))
            }
            Op::ConcatCols(vs) => {
                if vs.is_empty() {
                    return Err(shape_err!("concat of nothing"));
                }
                let r = self.d2(vs[0]).0;
                let widths: Vec<usize> = vs.iter().map(|v| self.d2(*v).1).collect();
                if vs.iter().any(|v| self.d2(*v).0 != r) {
                    return Err(shape_err!("concat of tensors with different row counts"));
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(r * total);
                for i in 0..r {
                    for (v, &w) in vs.iter().zip(&widths) {
                        out.extend_from_slice(&self.node(*v).value[i * w..(i + 1) * w]);
                    }
                }
                Ok((vec![r, total], out))
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = self.d2(*a);
                if start > end || *end > c {
                    return Err(shape_err!("column slice {start}..{end} of width {c}"));
                }
                let x = &self.node(*a).value;
                let w = end - start;
                let mut out = Vec::with_capacity(r * w);
                for i in 0..r {
                    out.extend_from_slice(&x[i * c + start..i * c + end]);
                }
                Ok((vec![r, w], out))
            }
            Op::SelectRows(mask, a, b) => {
                self.same_shape(*a, *b, "row select")?;
                let (r, c) = self.d2(*a);
                if mask.len() != r {
                    return Err(shape_err!("row mask of length {} for {r} rows", mask.len()));
                }
                let x = &self.node(*a).value;
                let y = &self.node(*b).value;
                let mut out = Vec::with_capacity(r * c);
                for (i, &m) in mask.iter().enumerate() {
                    let src = if m { x } else { y };
                    out.extend_from_slice(&src[i * c..(i + 1) * c]);
                }
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::MulConst(a, k) | Op::AddConst(a, k) => {
                let x = &self.node(*a).value;
                if k.len() != x.len() {
                    return Err(shape_err!("constant of length {} for {} values", k.len(), x.len()));
                }
                let out = match op {
                    Op::MulConst(..) => x.iter().zip(k.iter()).map(|(p, q)| p * q).collect(),
                    _ => x.iter().zip(k.iter()).map(|(p, q)| p + q).collect(),
                };
                Ok((self.node(*a).shape.clone(), out))
            }
            Op::Reshape(a) => {
                // the target shape is stored on the node itself; replay keeps it
                Ok((self.node(*a).shape.clone(), self.node(*a).value.clone()))
            }
        }
    }

    // ---- builders -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddRow(a, bias))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.push(Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.push(Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, k))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Sigmoid))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Tanh))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.push(Op::Unary(a, Unary::LeakyRelu(slope)))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Elu(alpha)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Relu))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Exp))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Ln))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Square))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Powf(p)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Unary(a, Unary::Clamp(lo, hi)))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MeanAll(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumCols(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        self.push(Op::GatherRows(a, idx))
    }

    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        self.push(Op::ScatterAddRows(a, idx, n))
    }

    pub fn segment_softmax(&mut self, a: Var, seg: Arc<[usize]>, nseg: usize) -> Result<Var> {
        self.push(Op::SegmentSoftmax(a, seg, nseg))
    }

    pub fn head_scale(&mut self, alpha: Var, msg: Var) -> Result<Var> {
        self.push(Op::HeadScale(alpha, msg))
    }

    pub fn head_dot(&mut self, x: Var, a: Var) -> Result<Var> {
        self.push(Op::HeadDot(x, a))
    }

    pub fn concat_cols(&mut self, vs: &[Var]) -> Result<Var> {
        self.push(Op::ConcatCols(vs.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols(a, start, end))
    }

    pub fn select_rows(&mut self, mask: Arc<[bool]>, a: Var, b: Var) -> Result<Var> {
        self.push(Op::SelectRows(mask, a, b))
    }

    pub fn mul_const(&mut self, a: Var, k: Arc<[f64]>) -> Result<Var> {
        self.push(Op::MulConst(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: Arc<[f64]>) -> Result<Var> {
        self.push(Op::AddConst(a, k))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.node(a).value.len() {
            return Err(shape_err!(
                "cannot reshape {:?} into {:?}",
                self.node(a).shape,
                shape
            ));
        }
        let v = self.push(Op::Reshape(a))?;
        self.nodes[v.0].shape = shape;
        Ok(v)
    }

    // ---- reverse sweep --------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // leaves that do not require gradients report none
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.d2(*a);
                let (_, n) = self.d2(*b);
                if self.node(*a).requires_grad {
                    let ga = mm_nt(g, m, n, &self.node(*b).value, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.node(*b).requires_grad {
                    let gb = mm_tn(&self.node(*a).value, m, k, g, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.d2(*a);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let x = &self.node(*a).value;
                let z = &self.node(*b).value;
                self.accumulate(grads, *a, g.iter().zip(z).map(|(p, q)| p * q).collect());
                self.accumulate(grads, *b, g.iter().zip(x).map(|(p, q)| p * q).collect());
            }
            Op::AddRow(a, b) => {
                let (r, c) = self.d2(*a);
                self.accumulate(grads, *a, g.to_vec());
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
                self.accumulate(grads, *b, gb);
            }
            Op::MulCol(a, s) => {
                let (r, c) = self.d2(*a);
                let x = &self.node(*a).value;
                let sv = &self.node(*s).value;
                let mut ga = g.to_vec();
                let mut gs = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] *= sv[i];
                        gs[i] += g[i * c + j] * x[i * c + j];
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *s, gs);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.iter().map(|x| x * k).collect()),
            Op::AddScalar(a, _) | Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Unary(a, kind) => {
                let x = &self.node(*a).value;
                let ga = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gv, (&xv, &yv))| gv * unary_derivative(*kind, xv, yv))
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = self.d2(*a);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                    for j in 0..c {
                        ga[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let n = self.node(*a).value.len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::MeanAll(a) => {
                let n = self.node(*a).value.len();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::SumCols(a) => {
                let (r, c) = self.d2(*a);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[i];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.d2(*a);
                let mut ga = vec![0.0; r * c];
                for (e, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[src * c + j] += g[e * c + j];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, idx, _) => {
                let (_, c) = self.d2(*a);
                let mut ga = Vec::with_capacity(idx.len() * c);
                for &t in idx.iter() {
                    ga.extend_from_slice(&g[t * c..(t + 1) * c]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let (r, c) = self.d2(*a);
                let mut dot = vec![0.0; nseg * c];
                for (e, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        dot[s * c + j] += g[e * c + j] * y[e * c + j];
                    }
                }
                let mut ga = vec![0.0; r * c];
                for (e, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        ga[e * c + j] = y[e * c + j] * (g[e * c + j] - dot[s * c + j]);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::HeadScale(alpha, msg) => {
                let (e, h) = self.d2(*alpha);
                let (_, hd) = self.d2(*msg);
                let d = hd / h;
                let av = &self.node(*alpha).value;
                let mv = &self.node(*msg).value;
                let mut galpha = vec![0.0; e * h];
                let mut gmsg = vec![0.0; e * hd];
                for i in 0..e {
                    for k in 0..h {
                        let w = av[i * h + k];
                        let mut acc = 0.0;
                        for q in 0..d {
                            let idx = i * hd + k * d + q;
                            acc += g[idx] * mv[idx];
                            gmsg[idx] = g[idx] * w;
                        }
                        galpha[i * h + k] = acc;
                    }
                }
                self.accumulate(grads, *alpha, galpha);
                self.accumulate(grads, *msg, gmsg);
            }
            Op::HeadDot(x, a) => {
                let (e, hd) = self.d2(*x);
                let (h, d) = self.d2(*a);
                let xv = &self.node(*x).value;
                let av = &self.node(*a).value;
                let mut gx = vec![0.0; e * hd];
                let mut ga = vec![0.0; h * d];
                for i in 0..e {
                    for k in 0..h {
                        let gv = g[i * h + k];
                        for q in 0..d {
                            gx[i * hd + k * d + q] = gv * av[k * d + q];
                            ga[k * d + q] += gv * xv[i * hd + k * d + q];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(vs) => {
                let r = self.d2(vs[0]).0;
                let widths: Vec<usize> = vs.iter().map(|v| self.d2(*v).1).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (v, &w) in vs.iter().zip(&widths) {
                    let mut gv = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gv.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    self.accumulate(grads, *v, gv);
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = self.d2(*a);
                let w = end - start;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SelectRows(mask, a, b) => {
                let (_, c) = self.d2(*a);
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for (i, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut ga } else { &mut gb };
                    dst[i * c..(i + 1) * c].copy_from_slice(&g[i * c..(i + 1) * c]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::MulConst(a, k) => {
                self.accumulate(grads, *a, g.iter().zip(k.iter()).map(|(p, q)| p * q).collect())
            }
            Op::AddConst(a, _) => self.accumulate(grads, *a, g.to_vec()),
        }
    }
}

/// Registers each tensor as a leaf, in order.
pub fn bind(tape: &mut Tape, params: &[&DiffTensor]) -> Vec<Var> {
    params.iter().map(|p| tape.leaf(p)).collect()
}

/// Stores gradients from a reverse sweep onto the parameters they belong to.
pub fn store_grads(params: Vec<&mut DiffTensor>, vars: &[Var], grads: &Gradients) -> Result<()> {
    for (p, v) in params.into_iter().zip(vars) {
        if p.requires_grad() {
            let g = grads.get_or_zeros(*v, p.len());
            p.set_grad(g)?;
        }
    }
    Ok(())
}
