use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{bilstm_tape, LstmParams, LstmVars};
use crate::error::{domain_err, shape_err, Result, ScafdsError};
use crate::numkernel::{store_grads, DiffTensor, Tape, Var};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::stgat::focal_loss_tape;

/// An account's transactions as encoded feature vectors, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxSequence {
    pub account: String,
    /// `T` steps, each of the model's input width.
    pub steps: Vec<Vec<f64>>,
    pub label: bool,
}

impl TxSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            in_dim: super::ingest::CHANNELS,
            hidden: 128,
            attention_dim: 128,
            epochs: 40,
            batch_size: 512,
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl SeqConfig {
    pub fn desk() -> Self {
        Self {
            hidden: 16,
            attention_dim: 16,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.attention_dim == 0 || self.batch_size == 0 {
            return Err(ScafdsError::Config("sequence model sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || self.focal_gamma < 0.0 {
            return Err(ScafdsError::Config("focal_alpha must lie in [0, 1] and focal_gamma be nonnegative".into()));
        }
        Ok(())
    }
}

/// Bidirectional LSTM encoder with additive attention over time and a
/// logistic readout of the context vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModel {
    pub config: SeqConfig,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    /// `2H × A`
    pub att_w: DiffTensor,
    pub att_b: DiffTensor,
    /// `A × 1`
    pub att_v: DiffTensor,
    /// `2H × 1`
    pub out_w: DiffTensor,
    pub out_b: DiffTensor,
    #[serde(default)]
    pub epochs_trained: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SeqVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    pub att_w: Var,
    pub att_b: Var,
    pub att_v: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// Recorded outputs for a batch.
pub struct SeqForward {
    /// `B × 1` scores.
    pub s: Var,
    /// `B × T` attention weights.
    pub alpha: Var,
    /// Hidden states per step, each `B × 2H`.
    pub hidden: Vec<Var>,
    /// `B × 2H` context vectors.
    pub z: Var,
}

/// Score and attention for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxScore {
    pub score: f64,
    pub alpha: Vec<f64>,
}

impl SeqModel {
    pub fn new(config: SeqConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, a) = (config.hidden, config.attention_dim);
        Ok(Self {
            fwd: LstmParams::init(config.in_dim, h, &mut rng),
            bwd: LstmParams::init(config.in_dim, h, &mut rng),
            att_w: DiffTensor::glorot(2 * h, a, &mut rng),
            att_b: DiffTensor::zeros_param(vec![a]),
            att_v: DiffTensor::glorot(a, 1, &mut rng),
            out_w: DiffTensor::glorot(2 * h, 1, &mut rng),
            out_b: DiffTensor::zeros_param(vec![1]),
            epochs_trained: 0,
            config,
        })
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        let mut v = self.fwd.tensors();
        v.extend(self.bwd.tensors());
        v.extend([&self.att_w, &self.att_b, &self.att_v, &self.out_w, &self.out_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut v = self.fwd.tensors_mut();
        v.extend(self.bwd.tensors_mut());
        v.extend([&mut self.att_w, &mut self.att_b, &mut self.att_v, &mut self.out_w, &mut self.out_b]);
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> SeqVars {
        let list: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        self.vars_from_list(&list).expect("own tensor list")
    }

    /// Typed handles from a flat list in [`SeqModel::tensors`] order.
    pub fn vars_from_list(&self, l: &[Var]) -> Result<SeqVars> {
        if l.len() != 11 {
            return Err(shape_err!("{} handles for 11 parameter tensors", l.len()));
        }
        Ok(SeqVars {
            fwd: LstmVars { w: l[0], u: l[1], b: l[2] },
            bwd: LstmVars { w: l[3], u: l[4], b: l[5] },
            att_w: l[6],
            att_b: l[7],
            att_v: l[8],
            out_w: l[9],
            out_b: l[10],
        })
    }

    /// Stacks a batch into one `B × din` input per time step.
    pub fn batch_inputs(&self, tape: &mut Tape, seqs: &[&TxSequence]) -> Result<Vec<Var>> {
        let t = seqs.first().ok_or_else(|| domain_err!("empty batch"))?.len();
        let din = self.config.in_dim;
        if t == 0 {
            return Err(domain_err!("sequences need at least one step"));
        }
        for s in seqs {
            if s.len() != t {
                return Err(shape_err!("sequence lengths {} and {t} in one batch", s.len()));
            }
            if let Some(bad) = s.steps.iter().find(|x| x.len() != din) {
                return Err(shape_err!("step of width {}, model expects {din}", bad.len()));
            }
        }
        (0..t)
            .map(|k| {
                let vals = seqs.iter().flat_map(|s| s.steps[k].iter().copied()).collect();
                tape.constant(vec![seqs.len(), din], vals)
            })
            .collect()
    }

    pub fn forward_tape(&self, tape: &mut Tape, v: &SeqVars, xs: &[Var]) -> Result<SeqForward> {
        let hidden = bilstm_tape(tape, (&self.fwd, &v.fwd), (&self.bwd, &v.bwd), xs)?;
        let (z, alpha) = attention_tape(tape, v.att_w, v.att_b, v.att_v, &hidden)?;
        let logit = tape.matmul(z, v.out_w)?;
        let logit = tape.add_row(logit, v.out_b)?;
        let s = tape.sigmoid(logit)?;
        Ok(SeqForward { s, alpha, hidden, z })
    }

    /// Hidden states `h_t` (length `2H` each) for one sequence.
    pub fn bilstm_forward(&self, seq: &TxSequence) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let v = self.bind(&mut tape);
        let xs = self.batch_inputs(&mut tape, &[seq])?;
        let hs = bilstm_tape(&mut tape, (&self.fwd, &v.fwd), (&self.bwd, &v.bwd), &xs)?;
        Ok(hs.iter().map(|&h| tape.value(h).to_vec()).collect())
    }

    /// Transaction fraud score and temporal attention for each sequence.
    pub fn score_batch(&self, seqs: &[&TxSequence]) -> Result<Vec<TxScore>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(self.config.batch_size.max(1)) {
            let mut tape = Tape::new();
            let v = self.bind(&mut tape);
            let xs = self.batch_inputs(&mut tape, chunk)?;
            let f = self.forward_tape(&mut tape, &v, &xs)?;
            let t = xs.len();
            let s = tape.value(f.s);
            let a = tape.value(f.alpha);
            for b in 0..chunk.len() {
                out.push(TxScore {
                    score: s[b],
                    alpha: a[b * t..(b + 1) * t].to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn score_transaction(&self, seq: &TxSequence) -> Result<TxScore> {
        Ok(self.score_batch(&[seq])?.remove(0))
    }
}

/// `α_t = softmax_t(vᵀ tanh(W h_t + b))` and `z = Σ_t α_t h_t`, batched.
/// Returns `(z, α)` with `z` of shape `B × 2H` and `α` of shape `B × T`.
pub fn attention_tape(tape: &mut Tape, w: Var, b: Var, v: Var, hidden: &[Var]) -> Result<(Var, Var)> {
    let mut scores = Vec::with_capacity(hidden.len());
    for &h in hidden {
        let u = tape.matmul(h, w)?;
        let u = tape.add_row(u, b)?;
        let u = tape.tanh(u)?;
        scores.push(tape.matmul(u, v)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let alpha = tape.softmax(scores)?;
    let mut z = None;
    for (t, &h) in hidden.iter().enumerate() {
        let a = tape.slice_cols(alpha, t, t + 1)?;
        let term = tape.mul_col(h, a)?;
        z = Some(match z {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((z.expect("nonempty"), alpha))
}

/// Attention weights and context vector for precomputed hidden states of
/// one sequence.
pub fn temporal_attention(model: &SeqModel, hidden: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if hidden.is_empty() {
        return Err(domain_err!("attention over an empty sequence"));
    }
    let width = hidden[0].len();
    let mut tape = Tape::new();
    let v = model.bind(&mut tape);
    let hs: Vec<Var> = hidden
        .iter()
        .map(|h| tape.constant(vec![1, width], h.clone()))
        .collect::<Result<_>>()?;
    let (z, alpha) = attention_tape(&mut tape, v.att_w, v.att_b, v.att_v, &hs)?;
    Ok((tape.value(alpha).to_vec(), tape.value(z).to_vec()))
}

/// Focal loss of a batch.
pub fn stage4_loss_tape(model: &SeqModel, tape: &mut Tape, v: &SeqVars, batch: &[&TxSequence]) -> Result<Var> {
    let xs = model.batch_inputs(tape, batch)?;
    let f = model.forward_tape(tape, v, &xs)?;
    let labels: Vec<bool> = batch.iter().map(|s| s.label).collect();
    let rows: Arc<[usize]> = (0..batch.len()).collect();
    let cfg = &model.config;
    Ok(focal_loss_tape(tape, f.s, &labels, &rows, cfg.focal_gamma, cfg.focal_alpha)?.0)
}

/// Mini-batch training with a per-epoch reshuffle; returns the mean batch
/// loss of every epoch.
pub fn train_stage4(model: &mut SeqModel, data: &[TxSequence]) -> Result<Vec<f64>> {
    if data.is_empty() && model.config.epochs > 0 {
        return Err(domain_err!("no sequences to train on"));
    }
    let cfg = model.config.clone();
    let mut opt = AdamW::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e9_0b47c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cosine_lr(cfg.optimizer.lr, cfg.optimizer.min_lr, epoch, cfg.epochs);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TxSequence> = chunk.iter().map(|&i| &data[i]).collect();
            let mut tape = Tape::new();
            let v = model.bind(&mut tape);
            let loss = stage4_loss_tape(model, &mut tape, &v, &batch)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                let last = curve.last().copied();
                return Err(ScafdsError::NanLoss {
                    epoch,
                    last_finite: last,
                    last_finite_epoch: last.map(|_| epoch - 1),
                });
            }
            let vars: Vec<Var> = vec![
                v.fwd.w, v.fwd.u, v.fwd.b, v.bwd.w, v.bwd.u, v.bwd.b, v.att_w, v.att_b, v.att_v, v.out_w, v.out_b,
            ];
            let grads = tape.backward(loss)?;
            store_grads(model.tensors_mut(), &vars, &grads)?;
            opt.step(&mut model.tensors_mut(), lr)?;
            total += value;
            batches += 1;
        }
        model.epochs_trained += 1;
        let mean = total / batches as f64;
        debug!("stage4 epoch {epoch} loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}
