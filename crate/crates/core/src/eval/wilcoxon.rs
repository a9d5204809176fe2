use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::metrics::midranks;
use crate::error::{domain_err, shape_err, Result};

/// Largest number of nonzero differences handled by the exact null
/// distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Rank sum of the positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
    /// Every difference was zero; `p_value` is 1.
    pub degenerate: bool,
}

/// Two-sided signed-rank test on paired samples. Zero differences are
/// dropped and tied magnitudes share midranks. Up to [`EXACT_MAX_N`] pairs the
/// p-value comes from the exact null distribution of `W+`; above that from
/// the tie-corrected normal approximation with continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(shape_err!("paired samples of lengths {} and {}", a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| v.is_nan()) {
        return Err(domain_err!("differences contain NaN"));
    }
    if d.is_empty() {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            degenerate: true,
        });
    }
    let n = d.len();
    if n < 5 {
        return Err(domain_err!("signed-rank test needs at least 5 nonzero differences, got {n}"));
    }
    let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&mags);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (p_value, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    Ok(WilcoxonResult {
        w_plus,
        p_value,
        n,
        exact,
        degenerate: false,
    })
}

/// Exact two-sided p-value: counts of `W+` over all `2ⁿ` sign patterns,
/// built by dynamic programming on doubled ranks (midranks are multiples of
/// one half).
pub fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2f64.powi(ranks.len() as i32);
    let obs = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=obs].iter().sum();
    let upper: f64 = counts[obs..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Normal approximation with tie correction and a half-unit continuity
/// correction.
pub fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}
