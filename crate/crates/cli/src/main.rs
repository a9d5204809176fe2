use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use scafds::eval::Variant;
use scafds::{Result, ScafdsError};
use scafds_cli::{cmd_attribute, cmd_evaluate, cmd_generate, cmd_sar, cmd_train, exit_code, PipelineConfig};

/// Interbank fraud surveillance: synthetic networks, graph training,
/// ablation evaluation, attribution and SAR drafting.
///
/// Log verbosity follows SCAFDS_LOG (default `info`).
#[derive(Parser, Debug)]
#[command(name = "scafds", version)]
struct Cli {
    /// JSON configuration; keys not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated variants: full, noedge, nofusion, notemporal,
    /// shuffled, gcn, gat. `evaluate` compares all of them; other commands
    /// take exactly one.
    #[arg(long, global = true)]
    ablation: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic snapshots and an event log under OUT/data.
    Generate,
    /// Train one variant and write a checkpoint.
    Train {
        /// Continue from OUT/checkpoint.json.
        #[arg(long)]
        resume: bool,
        /// Stop Stage 3 after this many epochs in total.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run the ablation suite over the configured seeds.
    Evaluate {
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write attribution records for the top-scoring institutions.
    Attribute {
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Gate attributions and write SAR drafts.
    Sar {
        #[arg(long)]
        top_k: Option<usize>,
    },
}

fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let vs: Vec<Variant> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Variant::parse)
        .collect::<Result<_>>()?;
    if vs.is_empty() {
        return Err(ScafdsError::Config("--ablation lists no variants".into()));
    }
    Ok(vs)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let variants = cli.ablation.as_deref().map(parse_variants).transpose()?;
    let single = |vs: &Option<Vec<Variant>>| -> Result<Option<Variant>> {
        match vs.as_deref() {
            None => Ok(None),
            Some([v]) => Ok(Some(*v)),
            Some(_) => Err(ScafdsError::Config("this command takes a single --ablation variant".into())),
        }
    };
    match cli.command {
        Command::Generate => {
            let s = cmd_generate(&cfg)?;
            println!(
                "{} snapshots, {} institutions, {} edges, positive rate {:.3}, {} events",
                s.snapshots, s.n_nodes, s.n_edges, s.positive_rate, s.n_events
            );
        }
        Command::Train { resume, stop_after } => {
            if let Some(v) = single(&variants)? {
                cfg.variant = v;
            }
            if stop_after.is_some() {
                cfg.stop_after_epochs = stop_after;
            }
            let o = cmd_train(&cfg, resume)?;
            match o.result {
                Some(r) => println!(
                    "{} seed {}: test AUPRC {:.4}, AUROC {:.4}, F1 {:.4}; state {}",
                    cfg.variant.name(),
                    cfg.seed,
                    r.auprc,
                    r.auroc,
                    r.f1,
                    o.checkpoint.state_hash
                ),
                None => println!(
                    "paused after epoch {}; state {}",
                    o.checkpoint.stage3.epoch, o.checkpoint.state_hash
                ),
            }
        }
        Command::Evaluate { seeds } => {
            if let Some(vs) = variants {
                cfg.models = vs;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            print!("{}", cmd_evaluate(&cfg)?.render_text());
        }
        Command::Attribute { top_k } => {
            if let Some(v) = single(&variants)? {
                cfg.variant = v;
            }
            if let Some(k) = top_k {
                cfg.top_k = k;
            }
            let cases = cmd_attribute(&cfg)?;
            println!("{} attribution records in {}", cases.len(), cfg.out.join("attribution").display());
        }
        Command::Sar { top_k } => {
            if let Some(v) = single(&variants)? {
                cfg.variant = v;
            }
            if let Some(k) = top_k {
                cfg.top_k = k;
            }
            let o = cmd_sar(&cfg)?;
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            println!("{} reports in {}", o.reports.len(), cfg.out.join("sar").display());
            if let Some(r) = &o.rates {
                println!(
                    "grounding: layer1 {} layer2 {} layer3 {} overall {}",
                    fmt(r.layer1),
                    fmt(r.layer2),
                    fmt(r.layer3),
                    fmt(r.overall)
                );
            }
            println!(
                "factual accuracy {}, compliance {}",
                fmt(o.factual_accuracy),
                fmt(o.compliance_rate)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCAFDS_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
