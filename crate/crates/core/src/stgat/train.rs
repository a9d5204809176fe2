use std::sync::Arc;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gat::SnapshotInput;
use super::loss::focal_loss_tape;
use super::model::{StgatModel, StgatVars};
use crate::error::{domain_err, Result, ScafdsError};
use crate::fusion::{bilinear_pairs_tape, fco_terms_tape, PairSet};
use crate::numkernel::{store_grads, Tape, Var};
use crate::optim::{cosine_lr, AdamW};

/// Everything a Stage 3 training run consumes.
#[derive(Clone, Debug)]
pub struct Stage3Data {
    pub snapshots: Vec<SnapshotInput>,
    pub labels: Vec<bool>,
    pub train_rows: Arc<[usize]>,
    /// Co-occurrence weighted pairs; empty disables the pair terms.
    pub pairs: PairSet,
}

impl Stage3Data {
    pub fn validate(&self) -> Result<()> {
        let n = self.snapshots.first().ok_or_else(|| domain_err!("no snapshots"))?.n;
        if self.labels.len() != n {
            return Err(domain_err!("{} labels for {n} nodes", self.labels.len()));
        }
        if self.train_rows.is_empty() || self.train_rows.iter().any(|&r| r >= n) {
            return Err(domain_err!("training rows must be a nonempty subset of the {n} nodes"));
        }
        if self.pairs.u.iter().chain(&self.pairs.v).any(|&x| x >= n) {
            return Err(domain_err!("pair supervision references a node outside the graph"));
        }
        Ok(())
    }
}

/// Focal loss on the training rows plus `pair_weight · (L_align + L_contrast)`
/// over the pair set, scored with the model's own bilinear form.
pub fn stage3_loss_tape(
    model: &StgatModel,
    tape: &mut Tape,
    vars: &StgatVars,
    data: &Stage3Data,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let cfg = &model.config;
    let fw = model.forward_tape(tape, vars, &data.snapshots, rng)?;
    let (focal, _) = focal_loss_tape(tape, fw.p, &data.labels, &data.train_rows, cfg.focal_gamma, cfg.focal_alpha)?;
    if cfg.pair_weight == 0.0 || data.pairs.is_empty() {
        return Ok(focal);
    }
    let scores = bilinear_pairs_tape(
        tape,
        fw.c,
        vars.m,
        Arc::from(data.pairs.u.clone()),
        Arc::from(data.pairs.v.clone()),
    )?;
    let (align, contrast) = fco_terms_tape(tape, scores, &data.pairs.f, cfg.tau_fco, cfg.margin, true)?;
    let pair = tape.add(align, contrast)?;
    let pair = tape.scale(pair, cfg.pair_weight)?;
    tape.add(focal, pair)
}

/// Resumable training state: optimiser moments, the next epoch and the loss
/// recorded so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage3Trainer {
    pub optimizer: AdamW,
    pub epoch: usize,
    pub losses: Vec<f64>,
}

impl Stage3Trainer {
    pub fn new(model: &StgatModel) -> Self {
        Self {
            optimizer: AdamW::new(model.config.optimizer),
            epoch: 0,
            losses: Vec::new(),
        }
    }

    fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd50f_0a7e);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Runs epochs until `until` (capped at the configured budget).
    pub fn run_until(&mut self, model: &mut StgatModel, data: &Stage3Data, until: usize) -> Result<()> {
        data.validate()?;
        let total = model.config.epochs;
        let until = until.min(total);
        while self.epoch < until {
            let epoch = self.epoch;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let mut rng = (model.config.dropout > 0.0).then(|| Self::epoch_rng(model.config.seed, epoch));
            let loss = stage3_loss_tape(model, &mut tape, &vars, data, rng.as_mut())?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                let last = self.losses.last().copied();
                return Err(ScafdsError::NanLoss {
                    epoch,
                    last_finite: last,
                    last_finite_epoch: last.map(|_| epoch - 1),
                });
            }
            let grads = tape.backward(loss)?;
            store_grads(model.tensors_mut(), &vars.list(), &grads)?;
            let lr = cosine_lr(model.config.optimizer.lr, model.config.optimizer.min_lr, epoch, total);
            self.optimizer.step(&mut model.tensors_mut(), lr)?;
            debug!("stage3 epoch {epoch} loss {value:.6} lr {lr:.2e}");
            self.losses.push(value);
            self.epoch += 1;
        }
        Ok(())
    }

    pub fn finished(&self, model: &StgatModel) -> bool {
        self.epoch >= model.config.epochs
    }
}

/// Trains for the full configured budget and returns the loss curve.
pub fn train_stage3(model: &mut StgatModel, data: &Stage3Data) -> Result<Vec<f64>> {
    let mut trainer = Stage3Trainer::new(model);
    trainer.run_until(model, data, model.config.epochs)?;
    Ok(trainer.losses)
}
