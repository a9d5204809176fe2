//! Bilinear fusion of transaction scores with contagion embeddings, the
//! co-occurrence alignment/contrastive terms, and the institution-level
//! systemic score.

use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, ScafdsError};
use crate::graphcore::InterbankGraph;
use crate::numkernel::{sigmoid_scalar, store_grads, DiffTensor, Tape, Var};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::stgat::focal_loss_tape;

/// Node pairs with their co-occurrence frequency.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub f: Vec<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Every edge `u → v` with its `window`-th feature, plus `n_unlinked`
    /// sampled ordered pairs without an edge, which carry `f = 0` because no
    /// co-occurrence has been observed for them.
    pub fn from_graph(g: &InterbankGraph, window: usize, n_unlinked: usize, seed: u64) -> Result<Self> {
        if g.n_edges() > 0 && window >= g.edge_feature_dim() {
            return Err(shape_err!("window {window} out of {} edge features", g.edge_feature_dim()));
        }
        let mut out = PairSet::default();
        let mut linked = HashSet::with_capacity(g.n_edges());
        for e in g.edges() {
            out.u.push(e.src);
            out.v.push(e.dst);
            out.f.push(e.features[window]);
            linked.insert((e.src, e.dst));
        }
        let n = g.n_nodes();
        let free = n * n.saturating_sub(1) - linked.len();
        let want = n_unlinked.min(free);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taken = HashSet::with_capacity(want);
        while taken.len() < want {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && !linked.contains(&(a, b)) && taken.insert((a, b)) {
                out.u.push(a);
                out.v.push(b);
                out.f.push(0.0);
            }
        }
        Ok(out)
    }
}

/// `c_uᵀ M c_v` for every pair, recorded on the tape as a `P × 1` column.
pub fn bilinear_pairs_tape(tape: &mut Tape, c: Var, m: Var, u: Arc<[usize]>, v: Arc<[usize]>) -> Result<Var> {
    let cm = tape.matmul(c, m)?;
    let cum = tape.gather_rows(cm, u)?;
    let cv = tape.gather_rows(c, v)?;
    let prod = tape.mul(cum, cv)?;
    tape.sum_cols(prod)
}

/// `c_uᵀ c_v` for every pair.
pub fn dot_pairs_tape(tape: &mut Tape, c: Var, u: Arc<[usize]>, v: Arc<[usize]>) -> Result<Var> {
    let cu = tape.gather_rows(c, u)?;
    let cv = tape.gather_rows(c, v)?;
    let prod = tape.mul(cu, cv)?;
    tape.sum_cols(prod)
}

/// Alignment and contrastive terms over precomputed pair scores. With
/// `hinge` the alignment gap is `max(0, 1 - s)`, which agrees with the plain
/// gap whenever `s ≤ 1` but stops rewarding scores beyond perfect alignment.
pub fn fco_terms_tape(tape: &mut Tape, scores: Var, f: &[f64], tau: f64, margin: f64, hinge: bool) -> Result<(Var, Var)> {
    if tape.value(scores).len() != f.len() {
        return Err(shape_err!("{} pair scores for {} frequencies", tape.value(scores).len(), f.len()));
    }
    let pos: Vec<usize> = (0..f.len()).filter(|&i| f[i] > tau).collect();
    let zero: Vec<usize> = (0..f.len()).filter(|&i| f[i] == 0.0).collect();
    let align = if pos.is_empty() {
        tape.constant(vec![1], vec![0.0])?
    } else {
        let s = tape.gather_rows(scores, Arc::from(pos.clone()))?;
        let mut gap = tape.one_minus(s)?;
        if hinge {
            gap = tape.relu(gap)?;
        }
        let fw: Arc<[f64]> = pos.iter().map(|&i| f[i]).collect();
        let weighted = tape.mul_const(gap, fw)?;
        tape.mean(weighted)?
    };
    let contrast = if zero.is_empty() {
        tape.constant(vec![1], vec![0.0])?
    } else {
        let s = tape.gather_rows(scores, Arc::from(zero))?;
        let over = tape.add_scalar(s, -margin)?;
        let hinge = tape.relu(over)?;
        tape.mean(hinge)?
    };
    Ok((align, contrast))
}

/// `c_uᵀ M c_v` for one pair; `m` is `G × G` row-major.
pub fn bilinear(c_u: &[f64], m: &[f64], c_v: &[f64]) -> Result<f64> {
    let g = c_u.len();
    if c_v.len() != g || m.len() != g * g {
        return Err(shape_err!("bilinear form with |c_u|={g}, |c_v|={}, |M|={}", c_v.len(), m.len()));
    }
    let mut s = 0.0;
    for i in 0..g {
        if c_u[i] == 0.0 {
            continue;
        }
        let row = &m[i * g..(i + 1) * g];
        s += c_u[i] * row.iter().zip(c_v).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(s)
}

/// Mean over pairs with `f > tau` of `(1 - score) · f`; zero when none qualify.
pub fn alignment_loss(scores: &[f64], f: &[f64], tau: f64) -> f64 {
    let terms: Vec<f64> = scores
        .iter()
        .zip(f)
        .filter(|(_, &fi)| fi > tau)
        .map(|(s, fi)| (1.0 - s) * fi)
        .collect();
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// Mean over pairs with `f = 0` of `max(0, score - margin)`.
pub fn contrastive_loss(scores: &[f64], f: &[f64], margin: f64) -> f64 {
    let terms: Vec<f64> = scores
        .iter()
        .zip(f)
        .filter(|(_, &fi)| fi == 0.0)
        .map(|(s, _)| (s - margin).max(0.0))
        .collect();
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// How the counterparty interaction term is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `c_vᵀ M c_u`.
    #[default]
    Bilinear,
    /// `c_vᵀ c_u`, the additive ablation.
    Dot,
}

/// Pooling of the interaction term over an institution's counterparties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

/// Weights `β_t` over an institution's transactions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Softmax of each transaction's attention mass.
    #[default]
    Attention,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub pooling: Pooling,
    pub beta: BetaMode,
    pub margin: f64,
    pub tau_fco: f64,
    /// Weight of the co-occurrence terms against the supervised loss.
    pub lambda: f64,
    /// Train `M` on the co-occurrence terms.
    pub use_fco: bool,
    /// Cap the alignment reward at a bilinear score of 1.
    pub align_hinge: bool,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Bilinear,
            pooling: Pooling::Mean,
            beta: BetaMode::Attention,
            margin: 0.5,
            tau_fco: 0.05,
            lambda: 1.0,
            use_fco: true,
            align_hinge: true,
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            epochs: 200,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

/// Learned fusion weights. `w = [w₁, w₂, w₃]`; the embedding projection is
/// the affine map `proj · c_v + proj_b`; PageRank enters the systemic score
/// scaled by the number of institutions so that it is of order one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub m: DiffTensor,
    pub w: DiffTensor,
    pub proj: DiffTensor,
    pub proj_b: DiffTensor,
    pub gamma: DiffTensor,
}

impl FusionParams {
    pub fn init(g: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            m: DiffTensor::randn(vec![g, g], 0.1 / (g as f64).sqrt(), &mut rng),
            w: DiffTensor::param(vec![3, 1], vec![1.0, 1.0, 1.0]).expect("static shape"),
            proj: DiffTensor::glorot(g, 1, &mut rng),
            proj_b: DiffTensor::zeros_param(vec![1]),
            gamma: DiffTensor::zeros_param(vec![1, 1]),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn w1(&self) -> f64 {
        self.w.values()[0]
    }
    pub fn w2(&self) -> f64 {
        self.w.values()[1]
    }
    pub fn w3(&self) -> f64 {
        self.w.values()[2]
    }
    pub fn gamma_value(&self) -> f64 {
        self.gamma.values()[0]
    }

    /// Scalar projection `f(c_v)`.
    pub fn project(&self, c_v: &[f64]) -> f64 {
        self.proj.values().iter().zip(c_v).map(|(a, b)| a * b).sum::<f64>() + self.proj_b.values()[0]
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        vec![&self.m, &self.w, &self.proj, &self.proj_b, &self.gamma]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        vec![&mut self.m, &mut self.w, &mut self.proj, &mut self.proj_b, &mut self.gamma]
    }
}

/// Interaction between `c_v` and one counterparty under the given mode.
pub fn interaction(params: &FusionParams, mode: FusionMode, c_v: &[f64], c_u: &[f64]) -> Result<f64> {
    match mode {
        FusionMode::Bilinear => bilinear(c_v, params.m.values(), c_u),
        FusionMode::Dot => {
            if c_v.len() != c_u.len() {
                return Err(shape_err!("dot product of lengths {} and {}", c_v.len(), c_u.len()));
            }
            Ok(c_v.iter().zip(c_u).map(|(a, b)| a * b).sum())
        }
    }
}

/// Pooled interaction over counterparties (zero when there are none).
pub fn amplification(
    params: &FusionParams,
    mode: FusionMode,
    pooling: Pooling,
    c_v: &[f64],
    counterparties: &[&[f64]],
) -> Result<f64> {
    let mut total = 0.0;
    for c_u in counterparties {
        total += interaction(params, mode, c_v, c_u)?;
    }
    Ok(match pooling {
        Pooling::Sum => total,
        Pooling::Mean if counterparties.is_empty() => 0.0,
        Pooling::Mean => total / counterparties.len() as f64,
    })
}

/// `σ(w₁ s_tx + w₂ f(c_v) + w₃ · amp)`.
pub fn forensic_score(
    s_tx: f64,
    c_v: &[f64],
    counterparties: &[&[f64]],
    params: &FusionParams,
    mode: FusionMode,
    pooling: Pooling,
) -> Result<f64> {
    if c_v.len() != params.dim() {
        return Err(shape_err!("embedding of length {} for fusion dimension {}", c_v.len(), params.dim()));
    }
    let amp = amplification(params, mode, pooling, c_v, counterparties)?;
    Ok(sigmoid_scalar(
        params.w1() * s_tx + params.w2() * params.project(c_v) + params.w3() * amp,
    ))
}

/// Normalised transaction weights. Attention mode applies a softmax to the
/// supplied per-transaction attention mass; uniform mode ignores it.
pub fn beta_weights(mode: BetaMode, attention_mass: &[f64]) -> Vec<f64> {
    let n = attention_mass.len();
    if n == 0 {
        return Vec::new();
    }
    match mode {
        BetaMode::Uniform => vec![1.0 / n as f64; n],
        BetaMode::Attention => {
            let mx = attention_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                return vec![1.0 / n as f64; n];
            }
            let e: Vec<f64> = attention_mass.iter().map(|a| (a - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemicScore {
    pub value: f64,
    /// Set when the institution has no transactions to aggregate.
    pub no_evidence: bool,
}

/// `σ(Σ β_t s_t + γ · pagerank)`.
pub fn systemic_risk_score(forensic: &[f64], beta: &[f64], gamma: f64, pagerank: f64) -> Result<SystemicScore> {
    if forensic.len() != beta.len() {
        return Err(shape_err!("{} scores for {} weights", forensic.len(), beta.len()));
    }
    if beta.iter().any(|b| *b < 0.0) {
        return Err(ScafdsError::Domain("beta weights must be nonnegative".into()));
    }
    let agg: f64 = forensic.iter().zip(beta).map(|(s, b)| s * b).sum();
    Ok(SystemicScore {
        value: sigmoid_scalar(agg + gamma * pagerank),
        no_evidence: forensic.is_empty(),
    })
}

/// Inputs for training and scoring the fusion stage over all institutions.
#[derive(Clone, Debug)]
pub struct FusionData {
    pub n: usize,
    /// `n × G` contagion embeddings.
    pub c: Vec<f64>,
    pub g: usize,
    /// Institution-level transaction score (zero when unavailable).
    pub s_tx: Vec<f64>,
    /// Counterparty edges `src → dst`: `src` is a counterparty of `dst`.
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub pagerank: Vec<f64>,
    pub labels: Vec<bool>,
    pub train_rows: Arc<[usize]>,
    pub pairs: PairSet,
}

/// Tape values of one fusion pass.
pub struct FusionForward {
    pub s_forensic: Var,
    pub systemic: Var,
    pub fco: Option<(Var, Var)>,
}

/// Trained fusion stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: FusionParams,
    #[serde(default)]
    pub epochs_trained: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionScores {
    pub s_forensic: Vec<f64>,
    pub systemic: Vec<f64>,
    pub pagerank: Vec<f64>,
}

impl FusionModel {
    pub fn new(config: FusionConfig, g: usize) -> Self {
        let params = FusionParams::init(g, config.seed);
        Self {
            config,
            params,
            epochs_trained: 0,
        }
    }

    /// Starts `f(c_v)` from an existing linear readout of the embeddings.
    pub fn init_projection(&mut self, weights: &DiffTensor, bias: &DiffTensor) -> Result<()> {
        if weights.shape() != self.params.proj.shape() || bias.len() != 1 {
            return Err(shape_err!("readout of shape {:?} for projection {:?}", weights.shape(), self.params.proj.shape()));
        }
        self.params.proj = weights.clone().with_requires_grad(true);
        self.params.proj_b = bias.clone().with_requires_grad(true);
        Ok(())
    }

    fn forward_tape(&self, tape: &mut Tape, vars: &[Var], d: &FusionData, with_fco: bool) -> Result<FusionForward> {
        let (m, w, proj, proj_b, gamma) = (vars[0], vars[1], vars[2], vars[3], vars[4]);
        if d.c.len() != d.n * d.g || d.g != self.params.dim() {
            return Err(shape_err!("embeddings do not match the fusion dimension {}", self.params.dim()));
        }
        let c = tape.constant(vec![d.n, d.g], d.c.clone())?;
        let pair = match self.config.mode {
            FusionMode::Bilinear => bilinear_pairs_tape(tape, c, m, d.dst.clone(), d.src.clone())?,
            FusionMode::Dot => dot_pairs_tape(tape, c, d.dst.clone(), d.src.clone())?,
        };
        let pair = if self.config.pooling == Pooling::Mean {
            let mut deg = vec![0usize; d.n];
            for &t in d.dst.iter() {
                deg[t] += 1;
            }
            let inv: Arc<[f64]> = d.dst.iter().map(|&t| 1.0 / deg[t] as f64).collect();
            tape.mul_const(pair, inv)?
        } else {
            pair
        };
        let amp = tape.scatter_add_rows(pair, d.dst.clone(), d.n)?;
        let fc = tape.matmul(c, proj)?;
        let fc = tape.add_row(fc, proj_b)?;
        let stx = tape.constant(vec![d.n, 1], d.s_tx.clone())?;
        let feats = tape.concat_cols(&[stx, fc, amp])?;
        let logit = tape.matmul(feats, w)?;
        let s_forensic = tape.sigmoid(logit)?;

        let n_scale = d.n as f64;
        let pr = tape.constant(vec![d.n, 1], d.pagerank.iter().map(|p| p * n_scale).collect())?;
        let gpr = tape.matmul(pr, gamma)?;
        let sys = tape.add(s_forensic, gpr)?;
        let systemic = tape.sigmoid(sys)?;

        let fco = if with_fco && !d.pairs.is_empty() {
            let scores = bilinear_pairs_tape(tape, c, m, Arc::from(d.pairs.u.clone()), Arc::from(d.pairs.v.clone()))?;
            Some(fco_terms_tape(
                tape,
                scores,
                &d.pairs.f,
                self.config.tau_fco,
                self.config.margin,
                self.config.align_hinge,
            )?)
        } else {
            None
        };
        Ok(FusionForward {
            s_forensic,
            systemic,
            fco,
        })
    }

    /// Loss on the training rows: focal loss on `s_forensic` and on the
    /// systemic score, plus `λ · (L_align + L_contrast)`.
    pub fn loss_tape(&self, tape: &mut Tape, vars: &[Var], d: &FusionData) -> Result<(Var, Option<(Var, Var)>)> {
        let cfg = &self.config;
        let fw = self.forward_tape(tape, vars, d, cfg.use_fco)?;
        let (l1, _) = focal_loss_tape(tape, fw.s_forensic, &d.labels, &d.train_rows, cfg.focal_gamma, cfg.focal_alpha)?;
        let (l2, _) = focal_loss_tape(tape, fw.systemic, &d.labels, &d.train_rows, cfg.focal_gamma, cfg.focal_alpha)?;
        let mut loss = tape.add(l1, l2)?;
        if let Some((a, c)) = fw.fco {
            let fco = tape.add(a, c)?;
            let fco = tape.scale(fco, cfg.lambda)?;
            loss = tape.add(loss, fco)?;
        }
        Ok((loss, fw.fco))
    }

    /// Trains for the configured number of epochs; returns the loss curve.
    pub fn train(&mut self, d: &FusionData) -> Result<Vec<f64>> {
        let mut opt = AdamW::new(self.config.optimizer);
        let epochs = self.config.epochs;
        let mut curve = Vec::with_capacity(epochs);
        let mut last_finite: Option<(usize, f64)> = None;
        for epoch in 0..epochs {
            let mut tape = Tape::new();
            let vars: Vec<Var> = self.params.tensors().into_iter().map(|t| tape.leaf(t)).collect();
            let (loss, _) = self.loss_tape(&mut tape, &vars, d)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(ScafdsError::NanLoss {
                    epoch,
                    last_finite: last_finite.map(|p| p.1),
                    last_finite_epoch: last_finite.map(|p| p.0),
                });
            }
            last_finite = Some((epoch, value));
            curve.push(value);
            let grads = tape.backward(loss)?;
            store_grads(self.params.tensors_mut(), &vars, &grads)?;
            let lr = cosine_lr(self.config.optimizer.lr, self.config.optimizer.min_lr, epoch, epochs);
            opt.step(&mut self.params.tensors_mut(), lr)?;
            self.epochs_trained += 1;
        }
        Ok(curve)
    }

    /// Scores for every institution.
    pub fn score(&self, d: &FusionData) -> Result<FusionScores> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let fw = self.forward_tape(&mut tape, &vars, d, false)?;
        Ok(FusionScores {
            s_forensic: tape.value(fw.s_forensic).to_vec(),
            systemic: tape.value(fw.systemic).to_vec(),
            pagerank: d.pagerank.clone(),
        })
    }

    /// Current `(L_align, L_contrast)` on the data's pair set.
    pub fn fco_losses(&self, d: &FusionData) -> Result<(f64, f64)> {
        let scores: Vec<f64> = d
            .pairs
            .u
            .iter()
            .zip(&d.pairs.v)
            .map(|(&u, &v)| bilinear(&d.c[u * d.g..(u + 1) * d.g], self.params.m.values(), &d.c[v * d.g..(v + 1) * d.g]))
            .collect::<Result<_>>()?;
        Ok((
            alignment_loss(&scores, &d.pairs.f, self.config.tau_fco),
            contrastive_loss(&scores, &d.pairs.f, self.config.margin),
        ))
    }
}

/// Writes `institution,S_v,s_forensic_mean,pagerank`.
pub fn write_scores_csv<W: Write>(scores: &FusionScores, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["institution", "S_v", "s_forensic_mean", "pagerank"])?;
    for i in 0..scores.systemic.len() {
        w.write_record([
            i.to_string(),
            scores.systemic[i].to_string(),
            scores.s_forensic[i].to_string(),
            scores.pagerank[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
