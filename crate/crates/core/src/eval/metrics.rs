use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(shape_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(domain_err!("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(domain_err!("metric needs both classes ({pos} positive, {neg} negative)"));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Average precision: `Σ (R_k - R_{k-1}) · P_k` over thresholds at each
/// distinct score, so tied scores enter the curve together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let mut group_tp = 0;
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                group_tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            ap += group_tp as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok(ap)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half, via the rank-sum identity.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// 1-based ranks in ascending order with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// F1 of the rule `score ≥ threshold`.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold that maximises validation F1, placed at the midpoint of the
/// gap below the cut. Ties between cuts go to the highest one.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check(scores, labels)?;
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(|a, b| b.total_cmp(a));
    uniq.dedup();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &t) in uniq.iter().enumerate() {
        let f = f1_at(scores, labels, t);
        if f > best.0 {
            best = (f, k);
        }
    }
    let k = best.1;
    let threshold = match uniq.get(k + 1) {
        Some(&lower) => uniq[k] / 2.0 + lower / 2.0,
        None => uniq[k],
    };
    Ok((threshold, best.0))
}

/// Picks the threshold on validation data and reports `(threshold, test F1)`.
pub fn f1_at_validation_threshold(
    val_scores: &[f64],
    val_labels: &[bool],
    test_scores: &[f64],
    test_labels: &[bool],
) -> Result<(f64, f64)> {
    let (t, _) = best_f1_threshold(val_scores, val_labels)?;
    check(test_scores, test_labels)?;
    Ok((t, f1_at(test_scores, test_labels, t)))
}

/// Metrics of one trained model on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub seed: u64,
    pub auprc: f64,
    pub auroc: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl RunResult {
    pub fn evaluate(
        model: &str,
        seed: u64,
        val: (&[f64], &[bool]),
        test: (&[f64], &[bool]),
    ) -> Result<Self> {
        let (threshold, f1) = f1_at_validation_threshold(val.0, val.1, test.0, test.1)?;
        Ok(Self {
            model: model.to_string(),
            seed,
            auprc: auprc(test.0, test.1)?,
            auroc: auroc(test.0, test.1)?,
            f1,
            threshold,
        })
    }
}
