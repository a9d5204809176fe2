use std::sync::Arc;

use log::warn;

use crate::error::{shape_err, Result};
use crate::numkernel::{Tape, Var};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalOutcome {
    pub loss: f64,
    /// Predictions that fell outside `(1e-12, 1 - 1e-12)` and were clamped.
    pub clamped: usize,
}

fn count_clamped(p: &[f64]) -> usize {
    let n = p.iter().filter(|&&v| !(v > PROB_CLAMP && v < 1.0 - PROB_CLAMP)).count();
    if n > 0 {
        warn!("focal loss clamped {n} probabilities");
    }
    n
}

/// Mean over samples of `-α_t (1 - p_t)^γ ln p_t`, with `α_t = alpha` for
/// positives and `1 - alpha` for negatives.
pub fn focal_loss(p: &[f64], y: &[bool], gamma: f64, alpha: f64) -> Result<FocalOutcome> {
    if p.len() != y.len() || p.is_empty() {
        return Err(shape_err!("{} predictions for {} labels", p.len(), y.len()));
    }
    let clamped = count_clamped(p);
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (pt, at) = if yi { (pi, alpha) } else { (1.0 - pi, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(FocalOutcome {
        loss: total / p.len() as f64,
        clamped,
    })
}

/// Focal loss recorded on a tape. `p` is a column of probabilities; only
/// rows listed in `rows` contribute.
pub fn focal_loss_tape(
    tape: &mut Tape,
    p: Var,
    y: &[bool],
    rows: &Arc<[usize]>,
    gamma: f64,
    alpha: f64,
) -> Result<(Var, usize)> {
    if tape.value(p).len() != y.len() {
        return Err(shape_err!("{} predictions for {} labels", tape.value(p).len(), y.len()));
    }
    if rows.is_empty() {
        return Err(shape_err!("focal loss over an empty sample"));
    }
    let sel = tape.gather_rows(p, rows.clone())?;
    let clamped = count_clamped(tape.value(sel));
    let ys: Vec<bool> = rows.iter().map(|&r| y[r]).collect();
    let sign: Arc<[f64]> = ys.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
    let offset: Arc<[f64]> = ys.iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
    let weight: Arc<[f64]> = ys.iter().map(|&t| if t { -alpha } else { alpha - 1.0 }).collect();

    let pc = tape.clamp(sel, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let pt = tape.mul_const(pc, sign)?;
    let pt = tape.add_const(pt, offset)?;
    let log_pt = tape.ln(pt)?;
    let q = tape.one_minus(pt)?;
    let modulator = if gamma == 0.0 {
        None
    } else if gamma == 1.0 {
        Some(q)
    } else {
        Some(tape.powf(q, gamma)?)
    };
    let term = match modulator {
        Some(m) => tape.mul(m, log_pt)?,
        None => log_pt,
    };
    let term = tape.mul_const(term, weight)?;
    Ok((tape.mean(term)?, clamped))
}
