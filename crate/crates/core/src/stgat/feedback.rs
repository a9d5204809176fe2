use serde::{Deserialize, Serialize};

use super::gat::SnapshotInput;
use crate::error::{domain_err, Result};

/// Attention over the in-edges of one receiving institution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InEdgeAttention {
    pub receiver: usize,
    pub sources: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl InEdgeAttention {
    /// Slice of an `E × H` attention matrix for one node and head.
    pub fn from_attention(snap: &SnapshotInput, attention: &[f64], heads: usize, head: usize, receiver: usize) -> Result<Self> {
        if attention.len() != snap.n_edges() * heads || head >= heads {
            return Err(domain_err!("attention matrix does not match {} edges × {heads} heads", snap.n_edges()));
        }
        let mut sources = Vec::new();
        let mut alpha = Vec::new();
        for (k, (&s, &d)) in snap.src.iter().zip(snap.dst.iter()).enumerate() {
            if d == receiver {
                sources.push(s);
                alpha.push(attention[k * heads + head]);
            }
        }
        Ok(Self { receiver, sources, alpha })
    }
}

/// Raises the weight of `edge = (u, v)` by `eta · delta` and renormalises
/// over all of `v`'s in-edges.
pub fn feedback_update(state: &InEdgeAttention, edge: (usize, usize), eta: f64, delta: f64) -> Result<InEdgeAttention> {
    let (u, v) = edge;
    if v != state.receiver {
        return Err(domain_err!("edge {u}->{v} does not end at receiver {}", state.receiver));
    }
    let k = state
        .sources
        .iter()
        .position(|&s| s == u)
        .ok_or_else(|| domain_err!("edge {u}->{v} is not an in-edge of {v}"))?;
    if !(eta >= 0.0 && delta >= 0.0) || !(eta * delta).is_finite() {
        return Err(domain_err!("feedback step needs finite nonnegative eta and delta"));
    }
    let mut alpha = state.alpha.clone();
    alpha[k] += eta * delta;
    let z: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= z);
    Ok(InEdgeAttention {
        receiver: state.receiver,
        sources: state.sources.clone(),
        alpha,
    })
}

/// Default confidence of a disposition: its strength decayed by age,
/// `strength / (1 + elapsed_days / 30)`.
pub fn disposition_delta(strength: f64, elapsed_days: f64) -> f64 {
    strength / (1.0 + elapsed_days.max(0.0) / 30.0)
}
