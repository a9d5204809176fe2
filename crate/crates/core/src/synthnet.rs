//! Synthetic interbank networks with parametric institution features,
//! composite-score labels and SAR-derived edge features.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cooccur::{EventSource, FraudEvent, FraudEventLog};
use crate::error::{Result, ScafdsError};
use crate::graphcore::{
    ras_with_prior, DirectedEdge, InstitutionNode, InterbankGraph, FEATURE_ASSETS, FEATURE_FRAUD, FEATURE_NPL,
    FEATURE_SAR, NODE_FEATURES,
};
use crate::util::{logit, mean, quantile, softplus, std_dev};

/// Beta-distribution shape pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_institutions: usize,
    pub n_edges: usize,
    pub label_percentile: f64,
    pub edge_noise_std: f64,
    pub seed: u64,
    /// Weights over z-scored (sar_rate, npl, fraud_rate).
    pub composite_weights: [f64; 3],
    /// Number of co-occurrence windows carried per edge.
    pub n_windows: usize,
    /// Parameters of the log-normal for total assets.
    pub assets_mu: f64,
    pub assets_sigma: f64,
    pub tier1: BetaParams,
    pub npl: BetaParams,
    pub lcr: BetaParams,
    pub fraud_rate: BetaParams,
    pub sar_rate: BetaParams,
    /// Interbank assets and liabilities as a share of total assets.
    pub interbank_share: (f64, f64),
    /// Log-scale spread of the random prior handed to RAS.
    pub prior_sigma: f64,
    /// Give every institution at least one lender and one borrower.
    pub ensure_in_out: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_institutions: 1000,
            n_edges: 20_000,
            label_percentile: 85.0,
            edge_noise_std: 0.02,
            seed: 0,
            composite_weights: [1.0, 1.0, 1.0],
            n_windows: 3,
            assets_mu: 6.0,
            assets_sigma: 1.2,
            tier1: BetaParams { a: 8.0, b: 60.0 },
            npl: BetaParams { a: 2.0, b: 50.0 },
            lcr: BetaParams { a: 6.0, b: 4.0 },
            fraud_rate: BetaParams { a: 1.5, b: 40.0 },
            sar_rate: BetaParams { a: 2.0, b: 12.0 },
            interbank_share: (0.05, 0.2),
            prior_sigma: 1.0,
            ensure_in_out: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScafdsError::Config(m));
        let n = self.n_institutions;
        if n < 2 {
            return bad(format!("n_institutions must be at least 2, got {n}"));
        }
        if !(self.label_percentile > 0.0 && self.label_percentile < 100.0) {
            return bad(format!("label_percentile {} outside (0, 100)", self.label_percentile));
        }
        if !(self.edge_noise_std >= 0.0 && self.edge_noise_std.is_finite()) {
            return bad(format!("edge_noise_std {} must be nonnegative", self.edge_noise_std));
        }
        if self.n_edges > n * (n - 1) {
            return bad(format!("{} edges do not fit on {n} institutions", self.n_edges));
        }
        if self.n_windows == 0 {
            return bad("n_windows must be positive".into());
        }
        if self.composite_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.composite_weights.iter().all(|&w| w == 0.0)
        {
            return bad("composite_weights must be nonnegative and not all zero".into());
        }
        for (name, p) in [
            ("tier1", self.tier1),
            ("npl", self.npl),
            ("lcr", self.lcr),
            ("fraud_rate", self.fraud_rate),
            ("sar_rate", self.sar_rate),
        ] {
            if !(p.a > 0.0 && p.b > 0.0) {
                return bad(format!("{name} beta parameters must be positive"));
            }
        }
        let (lo, hi) = self.interbank_share;
        if !(lo > 0.0 && hi >= lo) {
            return bad("interbank_share must satisfy 0 < lo <= hi".into());
        }
        if !(self.assets_sigma > 0.0 && self.prior_sigma >= 0.0) {
            return bad("assets_sigma must be positive and prior_sigma nonnegative".into());
        }
        Ok(())
    }
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let s = std_dev(x);
    if s == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / s).collect()
}

/// Composite fraud-risk score `Σ wᵢ · softplus(zᵢ)²` over z-scored
/// (sar_rate, npl, fraud_rate).
pub fn composite_score(nodes: &[InstitutionNode], weights: &[f64; 3]) -> Vec<f64> {
    let cols = [FEATURE_SAR, FEATURE_NPL, FEATURE_FRAUD];
    let z: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| zscore(&nodes.iter().map(|n| n.features[c]).collect::<Vec<_>>()))
        .collect();
    (0..nodes.len())
        .map(|i| {
            weights
                .iter()
                .zip(&z)
                .map(|(w, zc)| w * softplus(zc[i]).powi(2))
                .sum()
        })
        .collect()
}

/// Labels nodes whose composite score reaches the given percentile.
pub fn assign_labels(nodes: &mut [InstitutionNode], weights: &[f64; 3], percentile: f64) {
    let score = composite_score(nodes, weights);
    let cut = quantile(&score, percentile / 100.0);
    for (n, s) in nodes.iter_mut().zip(score) {
        n.label = Some(s >= cut);
    }
}

/// `clip((SAR_u + SAR_v)/2 + ε, 0, 1)`.
pub fn edge_window_feature(sar_u: f64, sar_v: f64, noise: f64) -> f64 {
    ((sar_u + sar_v) / 2.0 + noise).clamp(0.0, 1.0)
}

/// Network plus the per-edge noise draws, which later snapshots reuse.
struct Skeleton {
    graph: InterbankGraph,
    noise: Vec<Vec<f64>>,
}

fn draw_nodes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<InstitutionNode> {
    let n = cfg.n_institutions;
    let assets = LogNormal::new(cfg.assets_mu, cfg.assets_sigma).expect("validated");
    let beta = |p: BetaParams| Beta::new(p.a, p.b).expect("validated");
    let dists = [beta(cfg.tier1), beta(cfg.npl), beta(cfg.lcr), beta(cfg.fraud_rate), beta(cfg.sar_rate)];
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(NODE_FEATURES);
    cols.push((0..n).map(|_| assets.sample(rng)).collect());
    for d in &dists {
        cols.push((0..n).map(|_| d.sample(rng)).collect());
    }
    (0..n)
        .map(|i| {
            let mut features = [0.0; NODE_FEATURES];
            for (c, col) in cols.iter().enumerate() {
                features[c] = col[i];
            }
            InstitutionNode {
                id: i,
                features,
                label: None,
            }
        })
        .collect()
}

/// Directed edge set from an exposure matrix: optionally each node's
/// largest incoming and outgoing cell first, then the largest remaining
/// cells until `n_edges` are chosen. Returned sorted by (src, dst).
fn select_edges(x: &[f64], n: usize, n_edges: usize, ensure_in_out: bool) -> Vec<(usize, usize)> {
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    if ensure_in_out {
        let mut required: Vec<(f64, usize, usize)> = Vec::with_capacity(2 * n);
        for j in 0..n {
            let i = (0..n)
                .filter(|&i| i != j)
                .max_by(|&a, &b| x[a * n + j].total_cmp(&x[b * n + j]).then(b.cmp(&a)))
                .expect("n >= 2");
            required.push((x[i * n + j], i, j));
        }
        for i in 0..n {
            let j = (0..n)
                .filter(|&j| j != i)
                .max_by(|&a, &b| x[i * n + a].total_cmp(&x[i * n + b]).then(b.cmp(&a)))
                .expect("n >= 2");
            required.push((x[i * n + j], i, j));
        }
        required.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for (_, i, j) in required {
            if chosen.len() >= n_edges {
                break;
            }
            chosen.insert((i, j));
        }
    }
    if chosen.len() < n_edges {
        let mut order: Vec<usize> = (0..n * n).filter(|k| k / n != k % n).collect();
        order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
        for k in order {
            if chosen.len() >= n_edges {
                break;
            }
            chosen.insert((k / n, k % n));
        }
    }
    chosen.into_iter().collect()
}

fn build_skeleton(cfg: &SynthConfig) -> Result<Skeleton> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_institutions;
    let mut nodes = draw_nodes(cfg, &mut rng);
    assign_labels(&mut nodes, &cfg.composite_weights, cfg.label_percentile);

    let (lo, hi) = cfg.interbank_share;
    let mut share = || if hi > lo { rng.random_range(lo..hi) } else { lo };
    let out_m: Vec<f64> = nodes.iter().map(|v| v.features[FEATURE_ASSETS] * share()).collect();
    let mut in_m: Vec<f64> = nodes.iter().map(|v| v.features[FEATURE_ASSETS] * share()).collect();
    let scale = out_m.iter().sum::<f64>() / in_m.iter().sum::<f64>();
    in_m.iter_mut().for_each(|v| *v *= scale);

    let prior_dist = LogNormal::new(0.0, cfg.prior_sigma.max(1e-12)).expect("validated");
    let mut prior = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let p = prior_dist.sample(&mut rng);
            if i != j {
                prior[i * n + j] = if cfg.prior_sigma == 0.0 { 1.0 } else { p };
            }
        }
    }
    let total: f64 = out_m.iter().sum();
    let ras = ras_with_prior(&prior, &out_m, &in_m, true, 1e-9 * total, 5000)?;
    let x = ras.matrix.values;

    let pairs = select_edges(&x, n, cfg.n_edges, cfg.ensure_in_out);
    let noise_dist = Normal::new(0.0, cfg.edge_noise_std).expect("validated");
    let noise: Vec<Vec<f64>> = pairs
        .iter()
        .map(|_| (0..cfg.n_windows).map(|_| noise_dist.sample(&mut rng)).collect())
        .collect();
    let edges = pairs
        .iter()
        .zip(&noise)
        .map(|(&(s, d), eps)| DirectedEdge {
            src: s,
            dst: d,
            exposure: x[s * n + d],
            features: eps
                .iter()
                .map(|e| edge_window_feature(nodes[s].sar_rate(), nodes[d].sar_rate(), *e))
                .collect(),
        })
        .collect();
    Ok(Skeleton {
        graph: InterbankGraph::new(nodes, edges, 0)?,
        noise,
    })
}

/// Single synthetic snapshot.
pub fn generate_network(cfg: &SynthConfig) -> Result<InterbankGraph> {
    Ok(build_skeleton(cfg)?.graph)
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Quarterly snapshots sharing one topology. Node features follow a
/// Gaussian random walk with step `drift` in log space (assets) or logit
/// space (ratios); exposures are perturbed by a log-normal factor; edge
/// features and labels are recomputed each quarter with the per-edge noise
/// held fixed. The first snapshot equals [`generate_network`].
pub fn generate_snapshots(cfg: &SynthConfig, n_quarters: usize, drift: f64) -> Result<Vec<InterbankGraph>> {
    if n_quarters == 0 {
        return Err(ScafdsError::Config("n_quarters must be at least 1".into()));
    }
    if !(drift >= 0.0 && drift.is_finite()) {
        return Err(ScafdsError::Config(format!("drift {drift} must be nonnegative")));
    }
    let sk = build_skeleton(cfg)?;
    let base = sk.graph;
    // separate stream so that adding quarters never changes the base draw
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_d41f7);
    let step = Normal::new(0.0, drift).expect("checked");

    let to_latent = |c: usize, v: f64| {
        if c == FEATURE_ASSETS {
            v.ln()
        } else {
            logit(v.clamp(1e-12, 1.0 - 1e-12))
        }
    };
    let from_latent = |c: usize, v: f64| if c == FEATURE_ASSETS { v.exp() } else { expit(v) };

    let mut latent: Vec<[f64; NODE_FEATURES]> = base
        .nodes()
        .iter()
        .map(|n| {
            let mut l = [0.0; NODE_FEATURES];
            for c in 0..NODE_FEATURES {
                l[c] = to_latent(c, n.features[c]);
            }
            l
        })
        .collect();
    let mut log_exposure: Vec<f64> = vec![0.0; base.n_edges()];

    let mut out = vec![base.clone()];
    for q in 1..n_quarters {
        if drift == 0.0 {
            let g = InterbankGraph::new(base.nodes().to_vec(), base.edges().to_vec(), q as i64)?;
            out.push(g);
            continue;
        }
        for l in latent.iter_mut() {
            for v in l.iter_mut() {
                *v += step.sample(&mut rng);
            }
        }
        for le in log_exposure.iter_mut() {
            *le += step.sample(&mut rng);
        }
        let mut nodes: Vec<InstitutionNode> = base
            .nodes()
            .iter()
            .zip(&latent)
            .map(|(n, l)| {
                let mut m = n.clone();
                for c in 0..NODE_FEATURES {
                    m.features[c] = from_latent(c, l[c]);
                }
                m
            })
            .collect();
        assign_labels(&mut nodes, &cfg.composite_weights, cfg.label_percentile);
        let edges = base
            .edges()
            .iter()
            .zip(&sk.noise)
            .zip(&log_exposure)
            .map(|((e, eps), le)| DirectedEdge {
                src: e.src,
                dst: e.dst,
                exposure: e.exposure * le.exp(),
                features: eps
                    .iter()
                    .map(|x| edge_window_feature(nodes[e.src].sar_rate(), nodes[e.dst].sar_rate(), *x))
                    .collect(),
            })
            .collect();
        out.push(InterbankGraph::new(nodes, edges, q as i64)?);
    }
    Ok(out)
}

/// Model inputs for one snapshot: log total assets, then every column
/// z-scored across institutions. Row-major `n × 6`.
pub fn normalized_node_features(g: &InterbankGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let mut cols: Vec<Vec<f64>> = (0..NODE_FEATURES)
        .map(|c| {
            g.nodes()
                .iter()
                .map(|v| if c == FEATURE_ASSETS { v.features[c].ln() } else { v.features[c] })
                .collect()
        })
        .collect();
    for col in cols.iter_mut() {
        *col = zscore(col);
    }
    let mut out = vec![0.0; n * NODE_FEATURES];
    for i in 0..n {
        for c in 0..NODE_FEATURES {
            out[i * NODE_FEATURES + c] = cols[c][i];
        }
    }
    out
}

/// Event log consistent with a network's SAR rates: each institution files
/// a Poisson number of events over the horizon, at uniform random days.
pub fn synthesize_event_log(g: &InterbankGraph, horizon_days: i64, seed: u64) -> Result<FraudEventLog> {
    if horizon_days <= 0 {
        return Err(ScafdsError::Config("horizon_days must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = [
        EventSource::SarRegistry,
        EventSource::InternalSar,
        EventSource::ForeignFiu,
        EventSource::LawEnforcement,
    ];
    let mut events = Vec::new();
    for node in g.nodes() {
        // one filing per quarter at a SAR rate of 1
        let lambda = node.sar_rate() * horizon_days as f64 / 90.0;
        let k = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..k {
            events.push(FraudEvent {
                institution: node.id,
                time: rng.random_range(0..horizon_days),
                source: sources[rng.random_range(0..sources.len())],
            });
        }
    }
    FraudEventLog::new(events)
}
