use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scafds::eval::Variant;
use scafds::fusion::FusionModel;
use scafds::seqmodel::SeqModel;
use scafds::stgat::{Stage3Trainer, StgatModel};
use scafds::{Result, ScafdsError};

pub const FORMAT_VERSION: u32 = 1;

/// Trained (or partly trained) pipeline state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub seed: u64,
    pub variant: Variant,
    pub stgat: StgatModel,
    pub stage3: Stage3Trainer,
    pub fusion: Option<FusionModel>,
    pub fusion_losses: Vec<f64>,
    pub sequence: Option<SeqModel>,
    pub sequence_losses: Vec<f64>,
    /// Per-channel reference values for transaction attributions.
    pub background: Vec<f64>,
    pub state_hash: String,
}

#[derive(Serialize)]
struct HashedState<'a> {
    stgat: &'a StgatModel,
    stage3: &'a Stage3Trainer,
    fusion: &'a Option<FusionModel>,
    sequence: &'a Option<SeqModel>,
    background: &'a [f64],
}

impl Checkpoint {
    /// SHA-256 over the JSON encoding of every trained quantity.
    pub fn compute_hash(&self) -> Result<String> {
        let state = HashedState {
            stgat: &self.stgat,
            stage3: &self.stage3,
            fusion: &self.fusion,
            sequence: &self.sequence,
            background: &self.background,
        };
        let bytes = serde_json::to_vec(&state)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn seal(&mut self) -> Result<()> {
        self.state_hash = self.compute_hash()?;
        Ok(())
    }

    /// Every stage has run to completion.
    pub fn complete(&self) -> bool {
        self.stage3.finished(&self.stgat) && self.sequence.is_some() && (self.fusion.is_some() || !self.variant.uses_fusion())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format != FORMAT_VERSION {
            return Err(ScafdsError::State(format!("checkpoint format {} (expected {FORMAT_VERSION})", ck.format)));
        }
        let hash = ck.compute_hash()?;
        if hash != ck.state_hash {
            return Err(ScafdsError::State(format!("checkpoint hash mismatch in {}", path.display())));
        }
        Ok(ck)
    }
}
