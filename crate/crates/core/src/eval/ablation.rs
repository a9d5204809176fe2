use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::metrics::RunResult;
use super::split::{default_split, Split};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::error::{domain_err, Result, ScafdsError};
use crate::fusion::{FusionConfig, FusionData, FusionMode, FusionModel, PairSet};
use crate::graphcore::{edge_permutation, pagerank_weighted, permute_edge_features, InterbankGraph, PagerankWeighting};
use crate::stgat::{train_stage3, AttentionMode, SnapshotInput, Stage3Data, StgatConfig, StgatModel};
use crate::synthnet::{generate_snapshots, SynthConfig};
use crate::util::{mean, sample_std};

/// Model configurations compared by the ablation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    NoEdge,
    NoFusion,
    NoTemporal,
    Shuffled,
    /// Mean aggregation over neighbours, scored by the readout head.
    Gcn,
    /// Node-only attention, scored by the readout head.
    Gat,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoEdge,
        Variant::NoFusion,
        Variant::NoTemporal,
        Variant::Shuffled,
        Variant::Gcn,
        Variant::Gat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEdge => "noedge",
            Variant::NoFusion => "nofusion",
            Variant::NoTemporal => "notemporal",
            Variant::Shuffled => "shuffled",
            Variant::Gcn => "gcn",
            Variant::Gat => "gat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| ScafdsError::Config(format!("unknown model variant {s:?}")))
    }

    /// Whether the variant sees edge features at all.
    pub fn uses_edge_features(self) -> bool {
        !matches!(self, Variant::NoEdge | Variant::Gcn | Variant::Gat)
    }

    /// Whether the variant's score comes from the fusion stage.
    pub fn uses_fusion(self) -> bool {
        !matches!(self, Variant::Gcn | Variant::Gat)
    }

    /// Stage 3 configuration for this variant.
    pub fn stgat_config(self, base: &StgatConfig) -> StgatConfig {
        let mut c = base.clone();
        match self {
            Variant::NoEdge | Variant::Gat => {
                c.attention = AttentionMode::NodeOnly;
                c.edge_messages = false;
                c.pair_weight = 0.0;
            }
            Variant::Gcn => {
                c.attention = AttentionMode::Uniform;
                c.edge_messages = false;
                c.pair_weight = 0.0;
            }
            Variant::NoTemporal => c.temporal = false,
            Variant::Full | Variant::NoFusion | Variant::Shuffled => {}
        }
        c
    }

    pub fn fusion_config(self, base: &FusionConfig) -> FusionConfig {
        let mut c = base.clone();
        match self {
            Variant::NoFusion => c.mode = FusionMode::Dot,
            Variant::NoEdge => c.use_fco = false,
            _ => {}
        }
        c
    }

    pub fn pagerank_weighting(self) -> PagerankWeighting {
        if self.uses_edge_features() {
            PagerankWeighting::Cooccurrence
        } else {
            PagerankWeighting::Unweighted
        }
    }
}

/// Everything needed to run one Track B experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub snapshots: usize,
    pub drift: f64,
    pub stgat: StgatConfig,
    pub fusion: FusionConfig,
    pub damping: f64,
    /// Window whose co-occurrence feature supervises the pair terms.
    pub pair_window: usize,
    /// Unlinked pairs sampled per edge for the contrastive term.
    pub unlinked_ratio: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            snapshots: 4,
            drift: 0.05,
            stgat: StgatConfig::default(),
            fusion: FusionConfig::default(),
            damping: 0.85,
            pair_window: 0,
            unlinked_ratio: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// Sizes suited to a single core.
    pub fn desk() -> Self {
        Self {
            stgat: StgatConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.stgat.validate()?;
        if self.snapshots == 0 {
            return Err(ScafdsError::Config("snapshots must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(ScafdsError::Config("damping must lie in (0, 1)".into()));
        }
        if self.pair_window >= self.synth.n_windows {
            return Err(ScafdsError::Config("pair_window exceeds the number of windows".into()));
        }
        if self.fusion.margin <= 0.0 {
            return Err(ScafdsError::Config("fusion margin must be positive".into()));
        }
        Ok(())
    }
}

/// The synthetic snapshots and split for one seed. Labels are those of the
/// last snapshot.
#[derive(Clone, Debug)]
pub struct SeedData {
    pub seed: u64,
    pub graphs: Vec<InterbankGraph>,
    pub labels: Vec<bool>,
    pub split: Split,
}

impl SeedData {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let synth = SynthConfig {
            seed,
            ..cfg.synth.clone()
        };
        let graphs = generate_snapshots(&synth, cfg.snapshots, cfg.drift)?;
        let labels = graphs.last().expect("at least one snapshot").labels();
        let split = default_split(&labels, seed)?;
        Ok(Self {
            seed,
            graphs,
            labels,
            split,
        })
    }

    /// Snapshots as seen by `variant`: the shuffled control applies one
    /// permutation of edge features to every snapshot.
    pub fn graphs_for(&self, variant: Variant) -> Result<Vec<InterbankGraph>> {
        if variant != Variant::Shuffled {
            return Ok(self.graphs.clone());
        }
        let perm = edge_permutation(self.graphs[0].n_edges(), self.seed ^ 0x5_4ff1e);
        self.graphs.iter().map(|g| permute_edge_features(g, &perm)).collect()
    }
}

/// Scores of one trained variant on every node, plus the run's metrics.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub result: RunResult,
    pub scores: Vec<f64>,
    /// Final Stage 3 embeddings, `n × dim` row-major.
    pub embeddings: Vec<f64>,
    pub dim: usize,
    pub stage3_losses: Vec<f64>,
    pub fusion_losses: Vec<f64>,
    pub stgat: StgatModel,
    pub fusion: Option<FusionModel>,
}

/// Inputs to the fusion stage from a trained Stage 3 model.
pub fn fusion_data(
    cfg: &ExperimentConfig,
    variant: Variant,
    graph: &InterbankGraph,
    embeddings: Vec<f64>,
    g: usize,
    labels: &[bool],
    train: &[usize],
    pairs: PairSet,
) -> Result<FusionData> {
    let pr = pagerank_weighted(graph, variant.pagerank_weighting(), cfg.damping, 1e-12, 10_000)?;
    if !pr.converged {
        warn!("pagerank stopped after {} iterations (residual {:e})", pr.iterations, pr.residual);
    }
    Ok(FusionData {
        n: graph.n_nodes(),
        c: embeddings,
        g,
        s_tx: vec![0.0; graph.n_nodes()],
        src: graph.edges().iter().map(|e| e.src).collect(),
        dst: graph.edges().iter().map(|e| e.dst).collect(),
        pagerank: pr.scores,
        labels: labels.to_vec(),
        train_rows: Arc::from(train.to_vec()),
        pairs,
    })
}

/// An untrained Stage 3 model with the inputs it trains on.
#[derive(Clone, Debug)]
pub struct PreparedVariant {
    pub variant: Variant,
    pub graphs: Vec<InterbankGraph>,
    pub model: StgatModel,
    pub stage3: Stage3Data,
}

/// Builds the variant's Stage 3 model and data without training.
pub fn prepare_variant(cfg: &ExperimentConfig, data: &SeedData, variant: Variant) -> Result<PreparedVariant> {
    let graphs = data.graphs_for(variant)?;
    let last = graphs.last().expect("at least one snapshot");
    let mut stgat_cfg = variant.stgat_config(&cfg.stgat);
    stgat_cfg.seed = data.seed;
    stgat_cfg.edge_dim = last.edge_feature_dim();
    let mut snaps: Vec<SnapshotInput> = graphs.iter().map(SnapshotInput::from_graph).collect::<Result<_>>()?;
    if !variant.uses_edge_features() {
        // nothing downstream may read the edge features
        for s in &mut snaps {
            s.e.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let pairs = if variant.uses_edge_features() {
        let k = (last.n_edges() as f64 * cfg.unlinked_ratio).round() as usize;
        PairSet::from_graph(last, cfg.pair_window, k, data.seed ^ 0x9a1f)?
    } else {
        PairSet::default()
    };
    let stage3 = Stage3Data {
        snapshots: snaps,
        labels: data.labels.clone(),
        train_rows: Arc::from(data.split.train.clone()),
        pairs,
    };
    Ok(PreparedVariant {
        variant,
        model: StgatModel::new(stgat_cfg)?,
        graphs,
        stage3,
    })
}

/// Fusion (where the variant uses it) and evaluation after Stage 3.
pub fn finish_variant(
    cfg: &ExperimentConfig,
    data: &SeedData,
    prepared: PreparedVariant,
    stage3_losses: Vec<f64>,
) -> Result<VariantRun> {
    let PreparedVariant {
        variant,
        graphs,
        model,
        stage3,
    } = prepared;
    let last = graphs.last().expect("at least one snapshot");
    let out = model.infer(&stage3.snapshots)?;
    let (scores, fusion, fusion_losses) = if variant.uses_fusion() {
        let mut fcfg = variant.fusion_config(&cfg.fusion);
        fcfg.seed = data.seed;
        let fd = fusion_data(
            cfg,
            variant,
            last,
            out.embeddings.clone(),
            out.dim,
            &data.labels,
            &data.split.train,
            stage3.pairs,
        )?;
        let mut fm = FusionModel::new(fcfg, out.dim);
        fm.init_projection(&model.head_w, &model.head_b)?;
        let losses = fm.train(&fd)?;
        let s = fm.score(&fd)?;
        (s.systemic, Some(fm), losses)
    } else {
        (out.probabilities.clone(), None, Vec::new())
    };

    let pick = |idx: &[usize]| -> (Vec<f64>, Vec<bool>) {
        (idx.iter().map(|&i| scores[i]).collect(), idx.iter().map(|&i| data.labels[i]).collect())
    };
    let (vs, vl) = pick(&data.split.val);
    let (ts, tl) = pick(&data.split.test);
    let result = RunResult::evaluate(variant.name(), data.seed, (&vs, &vl), (&ts, &tl))?;
    info!(
        "{} seed {}: AUPRC {:.4} AUROC {:.4} F1 {:.4}",
        variant.name(),
        data.seed,
        result.auprc,
        result.auroc,
        result.f1
    );
    Ok(VariantRun {
        result,
        scores,
        embeddings: out.embeddings,
        dim: out.dim,
        stage3_losses,
        fusion_losses,
        stgat: model,
        fusion,
    })
}

/// Trains and evaluates one variant on one seed.
pub fn run_variant(cfg: &ExperimentConfig, data: &SeedData, variant: Variant) -> Result<VariantRun> {
    let mut prepared = prepare_variant(cfg, data, variant)?;
    let losses = train_stage3(&mut prepared.model, &prepared.stage3)?;
    finish_variant(cfg, data, prepared, losses)
}

/// One cell of the ablation table; `result` is absent when the run failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub variant: Variant,
    pub seed: u64,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// Mean AUPRC change against the full model.
    pub delta_auprc: Option<f64>,
    /// Signed-rank test of this variant's AUPRC against the full model.
    pub wilcoxon: Option<WilcoxonResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SuiteRow>,
    pub summary: Vec<VariantSummary>,
}

impl AblationTable {
    /// Per-seed AUPRC of a variant, in seed order; `None` if any run failed.
    pub fn auprc(&self, variant: Variant) -> Option<Vec<f64>> {
        self.seeds
            .iter()
            .map(|s| {
                self.rows
                    .iter()
                    .find(|r| r.variant == variant && r.seed == *s)
                    .and_then(|r| r.result.as_ref().map(|x| x.auprc))
            })
            .collect()
    }

    pub fn summary_of(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    /// Signed-rank test between two variants' AUPRC across seeds.
    pub fn compare(&self, a: Variant, b: Variant) -> Result<WilcoxonResult> {
        let (Some(x), Some(y)) = (self.auprc(a), self.auprc(b)) else {
            return Err(domain_err!("missing runs for {} or {}", a.name(), b.name()));
        };
        wilcoxon_signed_rank(&x, &y)
    }

    /// Per-seed rows followed by nothing else; floats printed in full.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "seed", "auprc", "auroc", "f1", "threshold", "status"])?;
        for r in &self.rows {
            match &r.result {
                Some(x) => w.write_record([
                    r.variant.name().to_string(),
                    r.seed.to_string(),
                    x.auprc.to_string(),
                    x.auroc.to_string(),
                    x.f1.to_string(),
                    x.threshold.to_string(),
                    "ok".to_string(),
                ])?,
                None => w.write_record([
                    r.variant.name().to_string(),
                    r.seed.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("failed: {}", r.error.as_deref().unwrap_or("")),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean ± std per model with the change against the full model and the
    /// signed-rank p-value.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>17} {:>17} {:>17} {:>9} {:>9}",
            "model", "AUPRC", "AUROC", "F1", "dAUPRC", "p"
        );
        for v in &self.summary {
            let cell = |m: f64, sd: f64| format!("{m:.3} ± {sd:.3}");
            let delta = v.delta_auprc.map(|d| format!("{d:+.3}")).unwrap_or_else(|| "-".into());
            let p = v
                .wilcoxon
                .map(|w| if w.degenerate { "n/a".to_string() } else { format!("{:.3}", w.p_value) })
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<12} {:>17} {:>17} {:>17} {:>9} {:>9}",
                v.variant.name(),
                cell(v.auprc_mean, v.auprc_std),
                cell(v.auroc_mean, v.auroc_std),
                cell(v.f1_mean, v.f1_std),
                delta,
                p
            );
            if v.failed > 0 {
                let _ = writeln!(s, "  ({} of {} runs failed)", v.failed, v.runs);
            }
        }
        s
    }
}

fn summarize(variants: &[Variant], seeds: &[u64], rows: &[SuiteRow]) -> Vec<VariantSummary> {
    let full: Vec<Option<f64>> = seeds
        .iter()
        .map(|s| {
            rows.iter()
                .find(|r| r.variant == Variant::Full && r.seed == *s)
                .and_then(|r| r.result.as_ref().map(|x| x.auprc))
        })
        .collect();
    variants
        .iter()
        .map(|&v| {
            let mine: Vec<&SuiteRow> = rows.iter().filter(|r| r.variant == v).collect();
            let ok: Vec<&RunResult> = mine.iter().filter_map(|r| r.result.as_ref()).collect();
            let col = |f: fn(&RunResult) -> f64| -> (f64, f64) {
                let x: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                if x.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (mean(&x), if x.len() > 1 { sample_std(&x) } else { 0.0 })
                }
            };
            let (auprc_mean, auprc_std) = col(|r| r.auprc);
            let (auroc_mean, auroc_std) = col(|r| r.auroc);
            let (f1_mean, f1_std) = col(|r| r.f1);
            let paired: Option<(Vec<f64>, Vec<f64>)> = (v != Variant::Full)
                .then(|| {
                    seeds
                        .iter()
                        .zip(&full)
                        .map(|(s, f)| {
                            let mine = mine.iter().find(|r| r.seed == *s)?.result.as_ref()?.auprc;
                            Some((mine, (*f)?))
                        })
                        .collect::<Option<Vec<(f64, f64)>>>()
                        .map(|p| p.into_iter().unzip())
                })
                .flatten();
            let delta_auprc = paired
                .as_ref()
                .map(|(a, b)| mean(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()));
            let wilcoxon = paired.as_ref().and_then(|(a, b)| wilcoxon_signed_rank(a, b).ok());
            VariantSummary {
                variant: v,
                runs: mine.len(),
                failed: mine.len() - ok.len(),
                auprc_mean,
                auprc_std,
                auroc_mean,
                auroc_std,
                f1_mean,
                f1_std,
                delta_auprc,
                wilcoxon,
            }
        })
        .collect()
}

/// Trains and evaluates each variant on each seed with identical splits.
/// A failed run is recorded and the suite moves on.
pub fn run_ablation_suite(cfg: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(ScafdsError::Config("no models to evaluate".into()));
    }
    if seeds.is_empty() {
        return Err(ScafdsError::Config("no seeds to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        let data = SeedData::generate(cfg, seed)?;
        for &v in variants {
            let row = match run_variant(cfg, &data, v) {
                Ok(run) => SuiteRow {
                    variant: v,
                    seed,
                    result: Some(run.result),
                    error: None,
                },
                Err(e) => {
                    warn!("{} seed {seed} failed: {e}", v.name());
                    SuiteRow {
                        variant: v,
                        seed,
                        result: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (r.variant, r.seed));
    let summary = summarize(variants, seeds, &rows);
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
        summary,
    })
}
