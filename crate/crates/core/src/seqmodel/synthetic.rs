use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ingest::{CHANNELS, DEFAULT_SEQ_LEN};
use super::model::TxSequence;

/// Sequences of Gaussian noise in which positives carry a short burst of
/// large, rapid transactions at a random offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub positive_rate: f64,
    pub burst_len: usize,
    /// Shift added to the amount channel during a burst.
    pub burst_shift: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_sequences: 400,
            seq_len: DEFAULT_SEQ_LEN,
            positive_rate: 0.2,
            burst_len: 3,
            burst_shift: 2.5,
            seed: 0,
        }
    }
}

pub fn planted_sequences(cfg: &PlantedConfig) -> Vec<TxSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burst = cfg.burst_len.min(cfg.seq_len);
    (0..cfg.n_sequences)
        .map(|i| {
            let label = rng.random::<f64>() < cfg.positive_rate;
            let mut steps: Vec<Vec<f64>> = (0..cfg.seq_len)
                .map(|_| (0..CHANNELS).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            if label && burst > 0 {
                let start = rng.random_range(0..=cfg.seq_len - burst);
                for step in &mut steps[start..start + burst] {
                    step[0] += cfg.burst_shift;
                    step[CHANNELS - 1] -= cfg.burst_shift;
                }
            }
            TxSequence {
                account: format!("acct{i:05}"),
                steps,
                label,
            }
        })
        .collect()
}
