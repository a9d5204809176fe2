//! Fraud co-occurrence frequency between institutions over rolling windows.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result, ScafdsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    SarRegistry,
    InternalSar,
    ForeignFiu,
    LawEnforcement,
}

impl EventSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EventSource::SarRegistry => "sar_registry",
            EventSource::InternalSar => "internal_sar",
            EventSource::ForeignFiu => "foreign_fiu",
            EventSource::LawEnforcement => "law_enforcement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "sar_registry" => EventSource::SarRegistry,
            "internal_sar" => EventSource::InternalSar,
            "foreign_fiu" => EventSource::ForeignFiu,
            "law_enforcement" => EventSource::LawEnforcement,
            _ => return None,
        })
    }
}

/// Confirmed fraud event at an institution, timed in whole days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FraudEvent {
    pub institution: usize,
    pub time: i64,
    pub source: EventSource,
}

/// Observation windows in days, strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceWindows(Vec<i64>);

impl CooccurrenceWindows {
    pub fn new(windows: Vec<i64>) -> Result<Self> {
        if windows.is_empty() {
            return Err(domain_err!("at least one window is required"));
        }
        if windows[0] <= 0 || windows.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain_err!("windows must be positive and strictly increasing: {windows:?}"));
        }
        Ok(Self(windows))
    }

    pub fn days(&self) -> &[i64] {
        &self.0
    }
}

impl Default for CooccurrenceWindows {
    fn default() -> Self {
        Self(vec![90, 180, 365])
    }
}

/// Confirmed dispositions fed back from investigators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disposition {
    pub u: usize,
    pub v: usize,
    pub time: i64,
    pub strength: f64,
}

/// Time-sorted event log with a per-institution index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FraudEventLog {
    events: Vec<FraudEvent>,
    times: BTreeMap<usize, Vec<i64>>,
}

impl FraudEventLog {
    pub fn new(mut events: Vec<FraudEvent>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.time < 0) {
            return Err(domain_err!("event at institution {} has negative time {}", e.institution, e.time));
        }
        // stable sort keeps the input order of simultaneous events
        events.sort_by_key(|e| e.time);
        let mut times: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
        for e in &events {
            times.entry(e.institution).or_default().push(e.time);
        }
        Ok(Self { events, times })
    }

    pub fn events(&self) -> &[FraudEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> Option<i64> {
        self.events.last().map(|e| e.time)
    }

    /// Event times of one institution, ascending.
    pub fn times_of(&self, institution: usize) -> &[i64] {
        self.times.get(&institution).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn push(&mut self, event: FraudEvent) -> Result<()> {
        if event.time < 0 {
            return Err(domain_err!("negative event time {}", event.time));
        }
        let pos = self.events.partition_point(|e| e.time <= event.time);
        self.events.insert(pos, event);
        let t = self.times.entry(event.institution).or_default();
        let p = t.partition_point(|&x| x <= event.time);
        t.insert(p, event.time);
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| ScafdsError::Schema(format!("missing column {name}")))
        };
        let (ci, ct, cs) = (col("institution")?, col("time")?, col("source")?);
        let mut events = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| ScafdsError::Schema(format!("line {}: bad {what}", k + 2));
            events.push(FraudEvent {
                institution: rec[ci].trim().parse().map_err(|_| bad("institution"))?,
                time: rec[ct].trim().parse().map_err(|_| bad("time"))?,
                source: EventSource::parse(&rec[cs]).ok_or_else(|| bad("source"))?,
            });
        }
        Self::new(events)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["institution", "time", "source"])?;
        for e in &self.events {
            w.write_record([e.institution.to_string(), e.time.to_string(), e.source.as_str().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Share of `u`'s events up to `t` that are followed by at least one `v`
/// event within `[t', t' + window]`, counting only events at or before `t`.
/// Zero when `u` has no visible events.
pub fn cooccurrence_frequency(log: &FraudEventLog, u: usize, v: usize, t: i64, window: i64) -> Result<f64> {
    if u == v {
        return Err(domain_err!("co-occurrence of institution {u} with itself is undefined"));
    }
    if window <= 0 {
        return Err(domain_err!("window must be positive, got {window}"));
    }
    let tu = log.times_of(u);
    let tu = &tu[..tu.partition_point(|&x| x <= t)];
    if tu.is_empty() {
        return Ok(0.0);
    }
    let tv = log.times_of(v);
    let tv = &tv[..tv.partition_point(|&x| x <= t)];
    let matched = tu
        .iter()
        .filter(|&&s| {
            let first = tv.partition_point(|&x| x < s);
            first < tv.len() && tv[first] <= s + window
        })
        .count();
    Ok(matched as f64 / tu.len() as f64)
}

/// `[f(u,v,t;W₁), f(u,v,t;W₂), ...]` in window order.
pub fn edge_feature_vector(
    log: &FraudEventLog,
    u: usize,
    v: usize,
    t: i64,
    windows: &CooccurrenceWindows,
) -> Result<Vec<f64>> {
    windows
        .days()
        .iter()
        .map(|&w| cooccurrence_frequency(log, u, v, t, w))
        .collect()
}

/// Records a confirmed disposition as a matched pair of events at both
/// institutions, so later frequencies reflect it.
pub fn apply_disposition(log: &FraudEventLog, d: &Disposition) -> Result<FraudEventLog> {
    let mut out = log.clone();
    for inst in [d.u, d.v] {
        out.push(FraudEvent {
            institution: inst,
            time: d.time,
            source: EventSource::InternalSar,
        })?;
    }
    Ok(out)
}
