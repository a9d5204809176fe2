use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};

/// Disjoint train/validation/test index sets, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Label-stratified split with the given train and validation fractions;
/// the remainder is the test set.
pub fn stratified_split(labels: &[bool], train_frac: f64, val_frac: f64, seed: u64) -> Result<Split> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(domain_err!("split fractions {train_frac}/{val_frac} leave no test set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// The 70/15/15 split used throughout the evaluation.
pub fn default_split(labels: &[bool], seed: u64) -> Result<Split> {
    stratified_split(labels, 0.70, 0.15, seed)
}
