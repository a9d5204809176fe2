use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use scafds::attribution::{build_record, channel_medians, AttributionRecord};
use scafds::cases::{case_inputs, case_metadata, institution_sequence, top_k};
use scafds::eval::{
    default_split, finish_variant, fusion_data, prepare_variant, run_ablation_suite, AblationTable, RunResult, SeedData,
    Variant,
};
use scafds::fusion::PairSet;
use scafds::graphcore::{read_graph, write_edges_csv, write_nodes_csv, InterbankGraph};
use scafds::sargen::{
    compliance_rate, factual_accuracy, gate_assertions, grounding_rate, render_report, write_summary_csv, CaseMetadata,
    GateResult, GroundingRates, SarReport,
};
use scafds::seqmodel::{ingest_transactions_csv, planted_sequences, train_stage4, PlantedConfig, SeqConfig, SeqModel, TxSequence};
use scafds::stgat::Stage3Trainer;
use scafds::synthnet::{generate_snapshots, synthesize_event_log, SynthConfig};
use scafds::{Result, ScafdsError};

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::PipelineConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn nodes_file(dir: &Path, q: usize) -> PathBuf {
    dir.join(format!("snapshot_{q}_nodes.csv"))
}

fn edges_file(dir: &Path, q: usize) -> PathBuf {
    dir.join(format!("snapshot_{q}_edges.csv"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn seed_synth(cfg: &PipelineConfig) -> SynthConfig {
    SynthConfig {
        seed: cfg.seed,
        ..cfg.experiment.synth.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub seed: u64,
    pub snapshots: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub positive_rate: f64,
    pub n_events: usize,
}

/// Writes every snapshot's node and edge tables plus an event log for the
/// last snapshot under `out/data`.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let dir = cfg.out.join("data");
    fs::create_dir_all(&dir)?;
    let graphs = generate_snapshots(&seed_synth(cfg), cfg.experiment.snapshots, cfg.experiment.drift)?;
    for (q, g) in graphs.iter().enumerate() {
        write_nodes_csv(g, BufWriter::new(File::create(nodes_file(&dir, q))?))?;
        write_edges_csv(g, BufWriter::new(File::create(edges_file(&dir, q))?))?;
    }
    let last = graphs.last().expect("at least one snapshot");
    let log = synthesize_event_log(last, cfg.event_horizon_days, cfg.seed)?;
    log.write_csv(BufWriter::new(File::create(dir.join("events.csv"))?))?;
    let labels = last.labels();
    let summary = GenerateSummary {
        seed: cfg.seed,
        snapshots: graphs.len(),
        n_nodes: last.n_nodes(),
        n_edges: last.n_edges(),
        positive_rate: labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64,
        n_events: log.len(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    info!(
        "generated {} snapshots: {} nodes, {} edges, positive rate {:.3}",
        summary.snapshots, summary.n_nodes, summary.n_edges, summary.positive_rate
    );
    Ok(summary)
}

/// The network for `cfg.seed`, read from `data_dir` when set.
pub fn load_seed_data(cfg: &PipelineConfig) -> Result<SeedData> {
    let Some(dir) = &cfg.data_dir else {
        return SeedData::generate(&cfg.experiment, cfg.seed);
    };
    let graphs: Vec<InterbankGraph> = (0..cfg.experiment.snapshots)
        .map(|q| read_graph(File::open(nodes_file(dir, q))?, File::open(edges_file(dir, q))?, q as i64))
        .collect::<Result<_>>()?;
    let labels = graphs.last().expect("at least one snapshot").labels();
    let split = default_split(&labels, cfg.seed)?;
    Ok(SeedData {
        seed: cfg.seed,
        graphs,
        labels,
        split,
    })
}

fn stage4_sequences(cfg: &PipelineConfig) -> Result<Vec<TxSequence>> {
    match &cfg.transactions {
        Some(t) => {
            let rep = ingest_transactions_csv(&t.path, &t.schema, None)?;
            info!(
                "ingested {} sequences ({} rows skipped, {} short accounts dropped)",
                rep.sequences.len(),
                rep.rows_skipped,
                rep.accounts_dropped
            );
            Ok(rep.sequences)
        }
        None => Ok(planted_sequences(&PlantedConfig {
            seed: cfg.seed ^ 0x7a_5e9,
            ..cfg.planted.clone()
        })),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Held-out metrics once every stage has finished.
    pub result: Option<RunResult>,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    seed: u64,
    variant: Variant,
    result: &'a RunResult,
    state_hash: &'a str,
}

fn write_losses(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(ScafdsError::from)?;
    w.write_record(["seed", "stage", "epoch", "loss"]).map_err(ScafdsError::from)?;
    for (stage, losses) in [
        ("stage3", &ck.stage3.losses),
        ("fusion", &ck.fusion_losses),
        ("stage4", &ck.sequence_losses),
    ] {
        for (e, l) in losses.iter().enumerate() {
            w.write_record([ck.seed.to_string(), stage.to_string(), e.to_string(), l.to_string()])
                .map_err(ScafdsError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trains Stage 3, fusion and Stage 4 for `cfg.variant`, writing a
/// checkpoint, the loss curves and held-out scores. With `resume`, Stage 3
/// continues from `out/checkpoint.json`.
pub fn cmd_train(cfg: &PipelineConfig, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    let data = load_seed_data(cfg)?;
    let mut prepared = prepare_variant(&cfg.experiment, &data, cfg.variant)?;
    let mut trainer = Stage3Trainer::new(&prepared.model);
    if resume {
        if !ck_path.is_file() {
            return Err(ScafdsError::State(format!("no checkpoint to resume at {}", ck_path.display())));
        }
        let ck = Checkpoint::load(&ck_path)?;
        if ck.seed != cfg.seed || ck.variant != cfg.variant || ck.stgat.config != prepared.model.config {
            return Err(ScafdsError::State("checkpoint was written under a different configuration".into()));
        }
        info!("resuming Stage 3 at epoch {}", ck.stage3.epoch);
        prepared.model = ck.stgat;
        trainer = ck.stage3;
    }
    let until = cfg.stop_after_epochs.unwrap_or(usize::MAX);
    trainer.run_until(&mut prepared.model, &prepared.stage3, until)?;

    let mut ck = Checkpoint {
        format: FORMAT_VERSION,
        seed: cfg.seed,
        variant: cfg.variant,
        stgat: prepared.model.clone(),
        stage3: trainer.clone(),
        fusion: None,
        fusion_losses: Vec::new(),
        sequence: None,
        sequence_losses: Vec::new(),
        background: Vec::new(),
        state_hash: String::new(),
    };
    if !trainer.finished(&prepared.model) {
        ck.seal()?;
        ck.save(&ck_path)?;
        write_losses(&cfg.out.join("losses.csv"), &ck)?;
        info!("stopped after Stage 3 epoch {}; state {}", trainer.epoch, ck.state_hash);
        return Ok(TrainOutcome {
            checkpoint: ck,
            result: None,
        });
    }

    let run = finish_variant(&cfg.experiment, &data, prepared, trainer.losses.clone())?;
    let seqs = stage4_sequences(cfg)?;
    let mut seq = SeqModel::new(SeqConfig {
        seed: cfg.seed,
        ..cfg.sequence.clone()
    })?;
    let seq_losses = train_stage4(&mut seq, &seqs)?;
    ck.stgat = run.stgat;
    ck.fusion = run.fusion;
    ck.fusion_losses = run.fusion_losses;
    ck.sequence = Some(seq);
    ck.sequence_losses = seq_losses;
    ck.background = channel_medians(&seqs);
    ck.seal()?;
    ck.save(&ck_path)?;
    write_losses(&cfg.out.join("losses.csv"), &ck)?;

    let mut w = csv::Writer::from_path(cfg.out.join("scores.csv"))?;
    w.write_record(["seed", "node", "label", "split", "score"])?;
    for (node, &score) in run.scores.iter().enumerate() {
        let split = if data.split.train.contains(&node) {
            "train"
        } else if data.split.val.contains(&node) {
            "val"
        } else {
            "test"
        };
        w.write_record([
            cfg.seed.to_string(),
            node.to_string(),
            u8::from(data.labels[node]).to_string(),
            split.to_string(),
            score.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        &cfg.out.join("metrics.json"),
        &TrainMetrics {
            seed: cfg.seed,
            variant: cfg.variant,
            result: &run.result,
            state_hash: &ck.state_hash,
        },
    )?;
    info!("trained {}; state {}", cfg.variant.name(), ck.state_hash);
    Ok(TrainOutcome {
        checkpoint: ck,
        result: Some(run.result),
    })
}

/// Runs the ablation suite over `cfg.models` and `cfg.seeds`, writing
/// `results.csv` and `results.txt`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<AblationTable> {
    cfg.validate()?;
    if cfg.models.is_empty() {
        return Err(ScafdsError::Config("no models to evaluate".into()));
    }
    fs::create_dir_all(&cfg.out)?;
    let table = run_ablation_suite(&cfg.experiment, &cfg.models, &cfg.seeds)?;
    table.write_csv(BufWriter::new(File::create(cfg.out.join("results.csv"))?))?;
    fs::write(cfg.out.join("results.txt"), table.render_text())?;
    Ok(table)
}

/// One attributed case with its ground-truth report fields.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributedCase {
    pub record: AttributionRecord,
    pub metadata: CaseMetadata,
    pub score: f64,
    pub label: bool,
}

fn load_trained(cfg: &PipelineConfig) -> Result<Checkpoint> {
    let path = cfg.out.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(ScafdsError::State(format!("no trained checkpoint at {}; run `train` first", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    if !ck.complete() {
        return Err(ScafdsError::State("checkpoint is only partly trained; resume `train` first".into()));
    }
    if ck.seed != cfg.seed {
        return Err(ScafdsError::State(format!("checkpoint seed {} differs from run seed {}", ck.seed, cfg.seed)));
    }
    Ok(ck)
}

/// Attribution records for the `top_k` institutions by systemic score.
pub fn attribute_cases(cfg: &PipelineConfig) -> Result<Vec<AttributedCase>> {
    cfg.validate()?;
    let ck = load_trained(cfg)?;
    let fusion = ck
        .fusion
        .as_ref()
        .ok_or_else(|| ScafdsError::State(format!("variant {} has no fusion stage to attribute", ck.variant.name())))?;
    let seq = ck.sequence.as_ref().expect("complete checkpoint");
    let data = load_seed_data(cfg)?;
    let mut prepared = prepare_variant(&cfg.experiment, &data, ck.variant)?;
    prepared.model = ck.stgat.clone();
    let out = prepared.model.infer(&prepared.stage3.snapshots)?;
    let last = prepared.graphs.last().expect("at least one snapshot");
    let fd = fusion_data(
        &cfg.experiment,
        ck.variant,
        last,
        out.embeddings.clone(),
        out.dim,
        &data.labels,
        &data.split.train,
        PairSet::default(),
    )?;
    let scores = fusion.score(&fd)?.systemic;
    top_k(&scores, cfg.top_k)
        .into_iter()
        .map(|v| {
            let history = institution_sequence(&cfg.planted, cfg.seed, v, data.labels[v]);
            let case = case_inputs(last, &out.embeddings, out.dim, v, cfg.gate_window, history)?;
            Ok(AttributedCase {
                record: build_record(&case, seq, fusion, &ck.background, cfg.layer1_target)?,
                metadata: case_metadata(&prepared.graphs, v)?,
                score: scores[v],
                label: data.labels[v],
            })
        })
        .collect()
}

/// Writes one attribution record per selected case under
/// `out/attribution`.
pub fn cmd_attribute(cfg: &PipelineConfig) -> Result<Vec<AttributedCase>> {
    let cases = attribute_cases(cfg)?;
    let dir = cfg.out.join("attribution");
    fs::create_dir_all(&dir)?;
    for c in &cases {
        write_json(&dir.join(format!("{}.json", c.record.case_id)), &c.record)?;
    }
    info!("wrote {} attribution records", cases.len());
    Ok(cases)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SarOutcome {
    pub seed: u64,
    pub rates: Option<GroundingRates>,
    pub factual_accuracy: Option<f64>,
    pub compliance_rate: Option<f64>,
    #[serde(skip)]
    pub gates: Vec<GateResult>,
    #[serde(skip)]
    pub reports: Vec<SarReport>,
}

/// Gates and renders a report per selected case under `out/sar`, with a
/// per-case rate summary and a run-level JSON of the batch metrics.
pub fn cmd_sar(cfg: &PipelineConfig) -> Result<SarOutcome> {
    let cases = attribute_cases(cfg)?;
    let dir = cfg.out.join("sar");
    fs::create_dir_all(&dir)?;
    let mut gates = Vec::with_capacity(cases.len());
    let mut reports = Vec::with_capacity(cases.len());
    for c in &cases {
        let gate = gate_assertions(&c.record, &cfg.thresholds)?;
        let report = render_report(&c.metadata, &gate);
        fs::write(dir.join(format!("{}.json", report.case_id)), report.to_json()? + "\n")?;
        gates.push(gate);
        reports.push(report);
    }
    write_summary_csv(&dir.join("summary.csv"), &gates, &reports)?;
    let truth: Vec<CaseMetadata> = cases.iter().map(|c| c.metadata.clone()).collect();
    let outcome = SarOutcome {
        seed: cfg.seed,
        rates: if gates.is_empty() { None } else { Some(grounding_rate(&gates)?) },
        factual_accuracy: factual_accuracy(&reports, &truth)?,
        compliance_rate: compliance_rate(&reports),
        gates,
        reports,
    };
    write_json(&dir.join("run.json"), &outcome)?;
    Ok(outcome)
}
