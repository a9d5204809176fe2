use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::model::TxSequence;
use crate::error::{Result, ScafdsError};

/// Width of an encoded transaction step.
pub const CHANNELS: usize = 10;
pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "log_amount",
    "counterparty",
    "tx_type",
    "time_of_day_sin",
    "time_of_day_cos",
    "geo",
    "device",
    "rolling_mean_amount",
    "rolling_std_amount",
    "log_gap",
];
/// Default sequence length; shorter accounts are dropped.
pub const DEFAULT_SEQ_LEN: usize = 32;
const ROLLING: usize = 5;

/// Column names in the transaction CSV. Categorical columns are optional;
/// an absent one encodes as the reserved code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TxSchema {
    pub account: String,
    pub time: String,
    pub amount: String,
    pub label: String,
    pub counterparty: Option<String>,
    pub tx_type: Option<String>,
    pub time_of_day: Option<String>,
    pub geo: Option<String>,
    pub device: Option<String>,
    pub seq_len: usize,
}

impl Default for TxSchema {
    fn default() -> Self {
        Self {
            account: "account".into(),
            time: "time".into(),
            amount: "amount".into(),
            label: "is_fraud".into(),
            counterparty: Some("counterparty".into()),
            tx_type: Some("tx_type".into()),
            time_of_day: Some("time_of_day".into()),
            geo: Some("geo".into()),
            device: Some("device".into()),
            seq_len: DEFAULT_SEQ_LEN,
        }
    }
}

/// Frequency-ranked integer codes: the most frequent value gets 1, ties
/// broken lexicographically, and 0 is kept for values never seen in fitting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codes: BTreeMap<String, usize>,
}

impl Codebook {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in values {
            *counts.entry(v).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self {
            codes: ranked.into_iter().enumerate().map(|(i, (v, _))| (v.to_string(), i + 1)).collect(),
        }
    }

    pub fn encode(&self, v: &str) -> usize {
        self.codes.get(v).copied().unwrap_or(0)
    }

    /// Code scaled into `[0, 1]`.
    pub fn encode_scaled(&self, v: &str) -> f64 {
        self.encode(v) as f64 / (self.codes.len() + 1) as f64
    }
}

/// Categorical encoders plus numeric medians, fitted on a training file and
/// reused for later files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TxEncoder {
    pub counterparty: Codebook,
    pub tx_type: Codebook,
    pub geo: Codebook,
    pub device: Codebook,
    pub amount_median: f64,
    pub tod_median: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub sequences: Vec<TxSequence>,
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub accounts_dropped: usize,
    pub encoder: TxEncoder,
}

#[derive(Clone, Debug)]
struct RawRow {
    account: String,
    time: f64,
    amount: Option<f64>,
    tod: Option<f64>,
    label: bool,
    cats: [String; 4],
}

/// Median of the present values, 0 if none are present.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Fills missing entries with the median of the present ones.
pub fn impute_median(column: &[Option<f64>]) -> Vec<f64> {
    let med = median(column.iter().flatten().copied());
    column.iter().map(|x| x.unwrap_or(med)).collect()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, ()> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| ())
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "1.0" => Some(true),
        "0" | "false" | "0.0" => Some(false),
        _ => None,
    }
}

/// Reads a transaction CSV into fixed-length per-account sequences.
///
/// Rows are grouped by account and sorted by time. Each account yields
/// `len / seq_len` non-overlapping windows; the remainder is dropped. A window
/// is labelled fraudulent if any of its transactions is. When `encoder` is
/// `None` it is fitted on this file.
pub fn ingest_transactions_csv(path: &Path, schema: &TxSchema, encoder: Option<&TxEncoder>) -> Result<IngestReport> {
    if schema.seq_len == 0 {
        return Err(ScafdsError::Config("seq_len must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(IngestReport {
            sequences: Vec::new(),
            rows_read: 0,
            rows_skipped: 0,
            accounts_dropped: 0,
            encoder: encoder.cloned().unwrap_or_default(),
        });
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| col(name).ok_or_else(|| ScafdsError::Schema(format!("missing column `{name}`")));
    let (ia, it, iamt, ilab) = (
        required(&schema.account)?,
        required(&schema.time)?,
        required(&schema.amount)?,
        required(&schema.label)?,
    );
    let optional = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => required(n).map(Some),
        }
    };
    let itod = optional(&schema.time_of_day)?;
    let icats = [
        optional(&schema.counterparty)?,
        optional(&schema.tx_type)?,
        optional(&schema.geo)?,
        optional(&schema.device)?,
    ];

    let mut rows = Vec::new();
    let mut read = 0;
    let mut skipped = 0;
    for (line, rec) in rdr.records().enumerate() {
        read += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warn!("row {}: {e}", line + 2);
                skipped += 1;
                continue;
            }
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parsed = (|| {
            let account = field(ia).trim();
            if account.is_empty() {
                return None;
            }
            let time = parse_opt(field(it)).ok()??;
            let amount = parse_opt(field(iamt)).ok()?;
            if amount.is_some_and(|a| a < 0.0 || !a.is_finite()) {
                return None;
            }
            let tod = match itod {
                Some(i) => parse_opt(field(i)).ok()?,
                None => None,
            };
            if tod.is_some_and(|t| !(0.0..24.0).contains(&t)) {
                return None;
            }
            let label = parse_label(field(ilab))?;
            let cats = icats.map(|c| c.map(|i| field(i).trim().to_string()).unwrap_or_default());
            Some(RawRow {
                account: account.to_string(),
                time,
                amount,
                tod,
                label,
                cats,
            })
        })();
        match parsed {
            Some(r) => rows.push(r),
            None => {
                warn!("row {}: unparseable, skipped", line + 2);
                skipped += 1;
            }
        }
    }

    let enc = match encoder {
        Some(e) => e.clone(),
        None => TxEncoder {
            counterparty: Codebook::fit(rows.iter().map(|r| r.cats[0].as_str())),
            tx_type: Codebook::fit(rows.iter().map(|r| r.cats[1].as_str())),
            geo: Codebook::fit(rows.iter().map(|r| r.cats[2].as_str())),
            device: Codebook::fit(rows.iter().map(|r| r.cats[3].as_str())),
            amount_median: median(rows.iter().filter_map(|r| r.amount)),
            tod_median: median(rows.iter().filter_map(|r| r.tod)),
        },
    };

    let mut by_account: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for r in rows {
        by_account.entry(r.account.clone()).or_default().push(r);
    }
    let mut sequences = Vec::new();
    let mut dropped = 0;
    for (account, mut txs) in by_account {
        if txs.len() < schema.seq_len {
            dropped += 1;
            continue;
        }
        txs.sort_by(|a, b| a.time.total_cmp(&b.time));
        let encoded = encode_account(&txs, &enc);
        for (w, chunk) in encoded.chunks_exact(schema.seq_len).enumerate() {
            let start = w * schema.seq_len;
            sequences.push(TxSequence {
                account: account.clone(),
                steps: chunk.to_vec(),
                label: txs[start..start + schema.seq_len].iter().any(|r| r.label),
            });
        }
    }
    Ok(IngestReport {
        sequences,
        rows_read: read,
        rows_skipped: skipped,
        accounts_dropped: dropped,
        encoder: enc,
    })
}

/// Channels: log amount, counterparty, type, time-of-day (sin, cos), geo,
/// device, rolling mean and std of log amount over the previous five
/// transactions, log gap since the previous transaction.
fn encode_account(txs: &[RawRow], enc: &TxEncoder) -> Vec<Vec<f64>> {
    let log_amt: Vec<f64> = txs.iter().map(|r| r.amount.unwrap_or(enc.amount_median).ln_1p()).collect();
    txs.iter()
        .enumerate()
        .map(|(k, r)| {
            let tod = r.tod.unwrap_or(enc.tod_median);
            let prev = &log_amt[k.saturating_sub(ROLLING)..k];
            let (mean, std) = if prev.is_empty() {
                (log_amt[k], 0.0)
            } else {
                let m = prev.iter().sum::<f64>() / prev.len() as f64;
                let var = prev.iter().map(|x| (x - m).powi(2)).sum::<f64>() / prev.len() as f64;
                (m, var.sqrt())
            };
            let gap = if k == 0 { 0.0 } else { (r.time - txs[k - 1].time).max(0.0) };
            vec![
                log_amt[k],
                enc.counterparty.encode_scaled(&r.cats[0]),
                enc.tx_type.encode_scaled(&r.cats[1]),
                (2.0 * PI * tod / 24.0).sin(),
                (2.0 * PI * tod / 24.0).cos(),
                enc.geo.encode_scaled(&r.cats[2]),
                enc.device.encode_scaled(&r.cats[3]),
                mean,
                std,
                gap.ln_1p(),
            ]
        })
        .collect()
}
