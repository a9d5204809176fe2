//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Average precision by scanning every distinct score as a cut and counting
/// hits from scratch at each one.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&y| y).count();
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for t in cuts {
        let tp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && **y).count();
        let fp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && !**y).count();
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        }
        prev_tp = tp;
    }
    ap
}

/// Fraction of positive/negative pairs ordered correctly, ties counting
/// one half.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pairs) = (0usize, 0usize);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1;
                twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice_wins as f64 / 2.0 / pairs as f64
}

fn f1_counts(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let tp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && **y).count();
    let fp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && !**y).count();
    let fneg = scores.iter().zip(labels).filter(|(s, y)| **s < t && **y).count();
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Best F1 over every possible predicted-positive set of the form
/// "top scores down to some observed value"; ties between cuts resolve to
/// the higher cut. Returns `(midpoint threshold, f1)`.
pub fn brute_best_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let f: Vec<f64> = cuts.iter().map(|&t| f1_counts(scores, labels, t)).collect();
    let best = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k = f.iter().position(|&v| v == best).unwrap();
    let t = if k + 1 < cuts.len() { cuts[k] / 2.0 + cuts[k + 1] / 2.0 } else { cuts[k] };
    (t, best)
}

/// Two-sided signed-rank p-value by enumerating all sign patterns. Ranks
/// are kept doubled so midranks stay integral.
pub fn brute_wilcoxon_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let doubled: Vec<usize> = mags
        .iter()
        .map(|&m| {
            let below = mags.iter().filter(|&&o| o < m).count();
            let tied = mags.iter().filter(|&&o| o == m).count();
            2 * below + tied + 1
        })
        .collect();
    let obs: usize = doubled.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: usize = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        if w <= obs {
            le += 1;
        }
        if w >= obs {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

/// PageRank from a dense Google matrix, iterated to a fixed point.
pub fn dense_pagerank(n: usize, edges: &[(usize, usize, f64)], damping: f64) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for &(s, d, x) in edges {
        w[s * n + d] += x;
    }
    let mut g = vec![0.0; n * n];
    for s in 0..n {
        let out: f64 = w[s * n..(s + 1) * n].iter().sum();
        for d in 0..n {
            g[d * n + s] = if out > 0.0 {
                damping * w[s * n + d] / out + (1.0 - damping) / n as f64
            } else {
                1.0 / n as f64
            };
        }
    }
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n).map(|d| (0..n).map(|s| g[d * n + s] * x[s]).sum()).collect();
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    x
}
