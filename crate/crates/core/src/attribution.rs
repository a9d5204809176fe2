//! Three-layer attribution record: Shapley values over transaction
//! channels, per-edge decomposition of the contagion amplification term and
//! the temporal attention profile.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result, ScafdsError};
use crate::fusion::{interaction, FusionModel, FusionParams, FusionMode, Pooling};
use crate::numkernel::sigmoid_scalar;
use crate::seqmodel::{median, SeqModel, TxSequence, CHANNEL_NAMES};

/// Largest feature count for coalition enumeration.
pub const EXACT_CAP: usize = 12;
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyValues {
    /// Model output with every feature at its background value.
    pub base: f64,
    /// Model output on the instance.
    pub output: f64,
    pub values: Vec<f64>,
    /// Standard errors; empty for exact values.
    pub std_errors: Vec<f64>,
}

impl ShapleyValues {
    /// `output - base - Σ values`.
    pub fn efficiency_residual(&self) -> f64 {
        self.output - self.base - self.values.iter().sum::<f64>()
    }
}

fn hybrid(x: &[f64], background: &[f64], present: impl Fn(usize) -> bool) -> Vec<f64> {
    (0..x.len()).map(|i| if present(i) { x[i] } else { background[i] }).collect()
}

fn evaluate<F>(model: &F, inputs: Vec<Vec<f64>>) -> Result<Vec<f64>>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let y = model(chunk)?;
        if y.len() != chunk.len() {
            return Err(shape_err!("model returned {} outputs for {} inputs", y.len(), chunk.len()));
        }
        out.extend(y);
    }
    Ok(out)
}

fn check_instance(x: &[f64], background: &[f64]) -> Result<()> {
    if x.len() != background.len() {
        return Err(shape_err!("instance of length {} with background of length {}", x.len(), background.len()));
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2ⁿ` coalitions; absent features
/// take their background value. `model` scores a batch of inputs.
pub fn shapley_exact<F>(model: F, x: &[f64], background: &[f64], max_features: usize) -> Result<ShapleyValues>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    check_instance(x, background)?;
    let n = x.len();
    let cap = max_features.min(EXACT_CAP);
    if n > cap {
        return Err(ScafdsError::TooManyFeatures { features: n, cap });
    }
    let masks = 1usize << n;
    let inputs = (0..masks).map(|s| hybrid(x, background, |i| s >> i & 1 == 1)).collect();
    let v = evaluate(&model, inputs)?;
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut weight = vec![0.0; n.max(1)];
    for (k, w) in weight.iter_mut().enumerate().take(n) {
        let mut r = 1.0 / n as f64;
        for j in 0..k {
            r *= (k - j) as f64 / (n - 1 - j) as f64;
        }
        *w = r;
    }
    let mut values = vec![0.0; n];
    for s in 0..masks {
        let size = s.count_ones() as usize;
        for (i, val) in values.iter_mut().enumerate() {
            if s >> i & 1 == 0 {
                *val += weight[size] * (v[s | 1 << i] - v[s]);
            }
        }
    }
    Ok(ShapleyValues {
        base: v[0],
        output: v[masks - 1],
        values,
        std_errors: Vec::new(),
    })
}

/// Permutation-sampling Shapley estimate with per-feature standard errors.
pub fn shapley_sampled<F>(model: F, x: &[f64], background: &[f64], n_permutations: usize, seed: u64) -> Result<ShapleyValues>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    check_instance(x, background)?;
    if n_permutations < 100 {
        return Err(domain_err!("n_permutations must be at least 100, got {n_permutations}"));
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut perms = Vec::with_capacity(n_permutations);
    let mut inputs = Vec::with_capacity(n_permutations * (n + 1));
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let mut cur = background.to_vec();
        inputs.push(cur.clone());
        for &i in &order {
            cur[i] = x[i];
            inputs.push(cur.clone());
        }
        perms.push(order.clone());
    }
    let v = evaluate(&model, inputs)?;
    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    for (p, perm) in perms.iter().enumerate() {
        let row = &v[p * (n + 1)..(p + 1) * (n + 1)];
        for (k, &i) in perm.iter().enumerate() {
            let d = row[k + 1] - row[k];
            sum[i] += d;
            sumsq[i] += d * d;
        }
    }
    let m = n_permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_errors = (0..n)
        .map(|i| {
            let var = ((sumsq[i] - m * values[i] * values[i]) / (m - 1.0)).max(0.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(ShapleyValues {
        base: v[0],
        output: v[n],
        values,
        std_errors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterparty {
    pub node: usize,
    pub embedding: Vec<f64>,
    /// Co-occurrence value used for gating (shortest window).
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttribution {
    pub src: usize,
    pub dst: usize,
    pub contribution: f64,
    pub f: f64,
}

/// Splits `w₃ · amp` into one term per in-edge counterparty `u → v`.
pub fn network_attribution(
    node: usize,
    c_v: &[f64],
    counterparties: &[Counterparty],
    params: &FusionParams,
    mode: FusionMode,
    pooling: Pooling,
) -> Result<Vec<EdgeAttribution>> {
    let scale = match pooling {
        Pooling::Mean if !counterparties.is_empty() => 1.0 / counterparties.len() as f64,
        _ => 1.0,
    };
    counterparties
        .iter()
        .map(|cp| {
            Ok(EdgeAttribution {
                src: cp.node,
                dst: node,
                contribution: params.w3() * interaction(params, mode, c_v, &cp.embedding)? * scale,
                f: cp.f,
            })
        })
        .collect()
}

/// Which score the transaction layer decomposes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer1Target {
    /// The sequence model's transaction score.
    Transaction,
    /// The fused forensic score with the network terms held fixed.
    #[default]
    Forensic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalAttribution {
    pub step: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub case_id: String,
    pub node: usize,
    pub target: Layer1Target,
    pub base_value: f64,
    pub output: f64,
    pub layer1: Vec<FeatureAttribution>,
    pub layer2: Vec<EdgeAttribution>,
    pub layer3: Vec<TemporalAttribution>,
}

/// One institution under review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseInputs {
    pub case_id: String,
    pub node: usize,
    pub sequence: TxSequence,
    pub embedding: Vec<f64>,
    pub counterparties: Vec<Counterparty>,
}

/// Per-channel medians over every step of the given sequences.
pub fn channel_medians(seqs: &[TxSequence]) -> Vec<f64> {
    let width = seqs.iter().flat_map(|s| s.steps.first()).map(Vec::len).next().unwrap_or(0);
    (0..width)
        .map(|k| median(seqs.iter().flat_map(|s| s.steps.iter().map(move |x| x[k]))))
        .collect()
}

/// Sets every dropped channel to its background value at all steps.
fn masked_sequence(seq: &TxSequence, keep: &[bool], background: &[f64]) -> TxSequence {
    let steps = seq
        .steps
        .iter()
        .map(|x| x.iter().enumerate().map(|(k, &v)| if keep[k] { v } else { background[k] }).collect())
        .collect();
    TxSequence {
        account: seq.account.clone(),
        steps,
        label: seq.label,
    }
}

/// Assembles the attribution record for one case. Layer 1 treats each
/// transaction channel as a player; an absent channel is set to its
/// background value at every step.
pub fn build_record(
    case: &CaseInputs,
    seq_model: &SeqModel,
    fusion: &FusionModel,
    background: &[f64],
    target: Layer1Target,
) -> Result<AttributionRecord> {
    if seq_model.epochs_trained == 0 || fusion.epochs_trained == 0 {
        return Err(ScafdsError::State("attribution needs trained sequence and fusion models".into()));
    }
    let width = seq_model.config.in_dim;
    if background.len() != width {
        return Err(shape_err!("background of length {} for {width} channels", background.len()));
    }
    let p = &fusion.params;
    let (mode, pooling) = (fusion.config.mode, fusion.config.pooling);
    let layer2 = network_attribution(case.node, &case.embedding, &case.counterparties, p, mode, pooling)?;
    let fixed = p.w2() * p.project(&case.embedding) + layer2.iter().map(|e| e.contribution).sum::<f64>();

    // players are indicators; 1 keeps the case's own channel
    let ones = vec![1.0; width];
    let zeros = vec![0.0; width];
    let model = |batch: &[Vec<f64>]| -> Result<Vec<f64>> {
        let seqs: Vec<TxSequence> = batch
            .iter()
            .map(|ind| {
                let keep: Vec<bool> = ind.iter().map(|&b| b == 1.0).collect();
                masked_sequence(&case.sequence, &keep, background)
            })
            .collect();
        let refs: Vec<&TxSequence> = seqs.iter().collect();
        let scores = seq_model.score_batch(&refs)?;
        Ok(scores
            .iter()
            .map(|s| match target {
                Layer1Target::Transaction => s.score,
                Layer1Target::Forensic => sigmoid_scalar(p.w1() * s.score + fixed),
            })
            .collect())
    };
    let shap = shapley_exact(model, &ones, &zeros, EXACT_CAP)?;
    let names: Vec<String> = if width == CHANNEL_NAMES.len() {
        CHANNEL_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..width).map(|k| format!("channel_{k}")).collect()
    };
    let scored = seq_model.score_transaction(&case.sequence)?;
    Ok(AttributionRecord {
        case_id: case.case_id.clone(),
        node: case.node,
        target,
        base_value: shap.base,
        output: shap.output,
        layer1: names
            .into_iter()
            .zip(shap.values)
            .map(|(feature, value)| FeatureAttribution { feature, value })
            .collect(),
        layer2,
        layer3: scored
            .alpha
            .into_iter()
            .enumerate()
            .map(|(step, alpha)| TemporalAttribution { step, alpha })
            .collect(),
    })
}
