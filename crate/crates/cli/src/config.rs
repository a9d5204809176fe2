use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scafds::attribution::Layer1Target;
use scafds::eval::{ExperimentConfig, Variant};
use scafds::sargen::Thresholds;
use scafds::seqmodel::{PlantedConfig, SeqConfig, TxSchema};
use scafds::{Result, ScafdsError};

/// A transaction CSV to train the sequence model on instead of planted
/// sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionSource {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: TxSchema,
}

/// Everything a command needs. Loaded from JSON; command-line flags
/// override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed for single runs.
    pub seed: u64,
    /// Seeds for `evaluate`.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Directory written by `generate`; when absent the network is
    /// regenerated from the seed.
    pub data_dir: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    /// Variant trained by `train` and explained by `attribute`/`sar`.
    pub variant: Variant,
    /// Variants compared by `evaluate`.
    pub models: Vec<Variant>,
    pub sequence: SeqConfig,
    /// Generator for Stage 4 training data and per-institution histories.
    pub planted: PlantedConfig,
    pub transactions: Option<TransactionSource>,
    pub thresholds: Thresholds,
    pub top_k: usize,
    pub layer1_target: Layer1Target,
    /// Co-occurrence window that gates counterparty assertions.
    pub gate_window: usize,
    pub event_horizon_days: i64,
    /// Stop Stage 3 after this many epochs and leave a resumable checkpoint.
    pub stop_after_epochs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("out"),
            data_dir: None,
            experiment: ExperimentConfig::desk(),
            variant: Variant::Full,
            models: Variant::ALL.to_vec(),
            sequence: SeqConfig::desk(),
            planted: PlantedConfig::default(),
            transactions: None,
            thresholds: Thresholds::default(),
            top_k: 10,
            layer1_target: Layer1Target::default(),
            gate_window: 0,
            event_horizon_days: 4 * 365,
            stop_after_epochs: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON file laid over the defaults key by key, so a partial
    /// section keeps the default values of its missing keys.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| ScafdsError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| ScafdsError::Config(e.to_string()))?;
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, user);
        serde_json::from_value(base).map_err(|e| ScafdsError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.sequence.validate()?;
        self.thresholds.validate()?;
        if self.gate_window >= self.experiment.synth.n_windows {
            return Err(ScafdsError::Config("gate_window exceeds the number of windows".into()));
        }
        if self.event_horizon_days <= 0 {
            return Err(ScafdsError::Config("event_horizon_days must be positive".into()));
        }
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(ScafdsError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("data directory {} does not exist", dir.display()),
                )));
            }
        }
        if let Some(t) = &self.transactions {
            if !t.path.is_file() {
                return Err(ScafdsError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("transaction file {} does not exist", t.path.display()),
                )));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
