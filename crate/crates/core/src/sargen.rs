//! Threshold-gated SAR assertions rendered from attribution records, plus
//! grounding, accuracy and completeness metrics over batches of reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::error::{domain_err, Result, ScafdsError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Layer 1 passes features whose |φ| exceeds this percentile of the
    /// case's |φ| values.
    pub tau1_percentile: f64,
    /// Minimum co-occurrence value for a counterparty assertion.
    pub tau2: f64,
    /// Minimum peak attention; `None` uses `2/T` for the case's length.
    pub tau3: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau1_percentile: 70.0,
            tau2: 0.05,
            tau3: None,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1_percentile > 0.0 && self.tau1_percentile < 100.0) {
            return Err(ScafdsError::Config("tau1_percentile must lie in (0, 100)".into()));
        }
        if !(self.tau2 >= 0.0) {
            return Err(ScafdsError::Config("tau2 must be nonnegative".into()));
        }
        if let Some(t) = self.tau3 {
            if !(t > 0.0 && t < 1.0) {
                return Err(ScafdsError::Config("tau3 must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn tau3_for(&self, steps: usize) -> f64 {
        self.tau3.unwrap_or(2.0 / steps.max(1) as f64)
    }
}

/// Linear-interpolation percentile (`p` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionKind {
    TransactionFeature,
    CounterpartyRelationship,
    TemporalPattern,
}

impl AssertionKind {
    pub fn layer(self) -> u8 {
        match self {
            Self::TransactionFeature => 1,
            Self::CounterpartyRelationship => 2,
            Self::TemporalPattern => 3,
        }
    }
}

/// Pointer from an assertion back into its attribution record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    /// Inline reference, e.g. `G1-3`.
    pub id: String,
    pub layer: u8,
    pub index: usize,
    /// Gated quantity: |φ|, f or α.
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarAssertion {
    pub kind: AssertionKind,
    pub text: String,
    pub grounding: Grounding,
    pub passed_threshold: bool,
}

/// Turns a grounded candidate into a sentence. The default renderer uses
/// fixed templates; another implementation can call out to a text service.
pub trait NarrativeRenderer {
    fn render(&self, record: &AttributionRecord, kind: AssertionKind, grounding: &Grounding) -> String;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateRenderer;

impl NarrativeRenderer for TemplateRenderer {
    fn render(&self, record: &AttributionRecord, kind: AssertionKind, g: &Grounding) -> String {
        match kind {
            AssertionKind::TransactionFeature => {
                let f = &record.layer1[g.index];
                format!(
                    "Transaction feature {} shifted the risk score by {:+.4} relative to the reference profile [{}].",
                    f.feature, f.value, g.id
                )
            }
            AssertionKind::CounterpartyRelationship => {
                let e = &record.layer2[g.index];
                format!(
                    "Counterparty institution {} exposes institution {} with fraud co-occurrence frequency {:.3} and contagion contribution {:+.4} [{}].",
                    e.src, e.dst, e.f, e.contribution, g.id
                )
            }
            AssertionKind::TemporalPattern => {
                let t = &record.layer3[g.index];
                format!(
                    "Activity concentrates in transaction {} of {} with attention weight {:.3} [{}].",
                    t.step + 1,
                    record.layer3.len(),
                    t.alpha,
                    g.id
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub case_id: String,
    pub emitted: Vec<SarAssertion>,
    pub suppressed: Vec<SarAssertion>,
}

impl GateResult {
    pub fn candidates(&self, layer: u8) -> usize {
        self.count(layer, &self.emitted) + self.count(layer, &self.suppressed)
    }

    pub fn emitted_in(&self, layer: u8) -> usize {
        self.count(layer, &self.emitted)
    }

    fn count(&self, layer: u8, set: &[SarAssertion]) -> usize {
        set.iter().filter(|a| a.grounding.layer == layer).count()
    }

    /// Emitted fraction for one layer; `None` without candidates.
    pub fn layer_rate(&self, layer: u8) -> Option<f64> {
        let c = self.candidates(layer);
        (c > 0).then(|| self.emitted_in(layer) as f64 / c as f64)
    }

    /// Assertions on the wrong side of their threshold: emitted at or below
    /// it, or suppressed above it.
    pub fn violations(&self) -> Vec<&SarAssertion> {
        let bad_emit = self.emitted.iter().filter(|a| !(a.grounding.value > a.grounding.threshold));
        let bad_supp = self.suppressed.iter().filter(|a| a.grounding.value > a.grounding.threshold);
        bad_emit.chain(bad_supp).collect()
    }
}

/// Candidate universe: one assertion per Layer 1 feature, one per Layer 2
/// counterparty edge and one for the Layer 3 peak-attention step (lowest
/// step on ties). Each candidate passes iff its value strictly exceeds the
/// layer's threshold.
pub fn gate_assertions(record: &AttributionRecord, thresholds: &Thresholds) -> Result<GateResult> {
    gate_assertions_with(record, thresholds, &TemplateRenderer)
}

pub fn gate_assertions_with(
    record: &AttributionRecord,
    thresholds: &Thresholds,
    renderer: &dyn NarrativeRenderer,
) -> Result<GateResult> {
    thresholds.validate()?;
    let mut out = GateResult {
        case_id: record.case_id.clone(),
        emitted: Vec::new(),
        suppressed: Vec::new(),
    };
    let mut push = |kind: AssertionKind, index: usize, value: f64, threshold: f64| {
        let grounding = Grounding {
            id: format!("G{}-{index}", kind.layer()),
            layer: kind.layer(),
            index,
            value,
            threshold,
        };
        let passed = value > threshold;
        let a = SarAssertion {
            kind,
            text: renderer.render(record, kind, &grounding),
            grounding,
            passed_threshold: passed,
        };
        if passed {
            out.emitted.push(a);
        } else {
            out.suppressed.push(a);
        }
    };

    let mags: Vec<f64> = record.layer1.iter().map(|f| f.value.abs()).collect();
    if mags.iter().any(|m| !m.is_finite()) {
        return Err(domain_err!("non-finite Shapley value in case {}", record.case_id));
    }
    let tau1 = percentile(&mags, thresholds.tau1_percentile);
    for (i, &m) in mags.iter().enumerate() {
        push(AssertionKind::TransactionFeature, i, m, tau1);
    }
    for (i, e) in record.layer2.iter().enumerate() {
        push(AssertionKind::CounterpartyRelationship, i, e.f, thresholds.tau2);
    }
    if let Some((i, peak)) = record
        .layer3
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, t)| match best {
            Some((_, b)) if b >= t.alpha => best,
            _ => Some((i, t.alpha)),
        })
    {
        push(AssertionKind::TemporalPattern, i, peak, thresholds.tau3_for(record.layer3.len()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: String,
    pub end: String,
}

/// Case fields copied into the report. Missing values make the report
/// non-compliant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMetadata {
    pub subject_id: Option<String>,
    pub activity_type: Option<String>,
    pub amounts: Option<Vec<f64>>,
    pub date_range: Option<DateRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarReport {
    pub case_id: String,
    pub subject_id: Option<String>,
    pub activity_type: Option<String>,
    pub amounts: Option<Vec<f64>>,
    pub date_range: Option<DateRange>,
    pub description: Vec<String>,
    /// Full gate log, emitted and suppressed.
    pub grounding: Vec<SarAssertion>,
    pub compliant: bool,
}

impl SarReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fills the report fields. A report is compliant when subject, activity
/// type, amounts, date range and a nonempty description are all present.
pub fn render_report(meta: &CaseMetadata, gate: &GateResult) -> SarReport {
    let description: Vec<String> = gate.emitted.iter().map(|a| a.text.clone()).collect();
    let present = |s: &Option<String>| s.as_deref().is_some_and(|x| !x.trim().is_empty());
    let compliant = present(&meta.subject_id)
        && present(&meta.activity_type)
        && meta.amounts.as_ref().is_some_and(|a| !a.is_empty())
        && meta.date_range.as_ref().is_some_and(|d| !d.start.is_empty() && !d.end.is_empty())
        && !description.is_empty();
    let mut grounding: Vec<SarAssertion> = gate.emitted.iter().chain(&gate.suppressed).cloned().collect();
    grounding.sort_by(|a, b| (a.grounding.layer, a.grounding.index).cmp(&(b.grounding.layer, b.grounding.index)));
    SarReport {
        case_id: gate.case_id.clone(),
        subject_id: meta.subject_id.clone(),
        activity_type: meta.activity_type.clone(),
        amounts: meta.amounts.clone(),
        date_range: meta.date_range.clone(),
        description,
        grounding,
        compliant,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingRates {
    pub layer1: Option<f64>,
    pub layer2: Option<f64>,
    pub layer3: Option<f64>,
    /// Unweighted mean of the applicable layer rates.
    pub overall: Option<f64>,
}

impl GroundingRates {
    pub fn layer(&self, layer: u8) -> Option<f64> {
        match layer {
            1 => self.layer1,
            2 => self.layer2,
            3 => self.layer3,
            _ => None,
        }
    }
}

fn macro_mean(rates: [Option<f64>; 3]) -> Option<f64> {
    let present: Vec<f64> = rates.into_iter().flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Per-layer emitted/candidate ratios pooled over cases. A layer with no
/// candidates is reported as `None` and left out of the overall mean.
pub fn grounding_rate(cases: &[GateResult]) -> Result<GroundingRates> {
    if cases.is_empty() {
        return Err(domain_err!("grounding rate over zero cases"));
    }
    let rate = |layer: u8| {
        let c: usize = cases.iter().map(|g| g.candidates(layer)).sum();
        let e: usize = cases.iter().map(|g| g.emitted_in(layer)).sum();
        (c > 0).then(|| e as f64 / c as f64)
    };
    let (l1, l2, l3) = (rate(1), rate(2), rate(3));
    Ok(GroundingRates {
        layer1: l1,
        layer2: l2,
        layer3: l3,
        overall: macro_mean([l1, l2, l3]),
    })
}

fn amount_str(a: f64) -> String {
    format!("{a:.2}")
}

/// Fraction of report field values (subject, each amount to the cent, date
/// range endpoints) equal to the ground truth. Amounts are compared by
/// position; a missing report value never matches. `None` for no reports.
pub fn factual_accuracy(reports: &[SarReport], truth: &[CaseMetadata]) -> Result<Option<f64>> {
    if reports.len() != truth.len() {
        return Err(domain_err!("{} reports for {} ground-truth cases", reports.len(), truth.len()));
    }
    if reports.is_empty() {
        return Ok(None);
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut check = |want: Option<String>, got: Option<String>| {
        total += 1;
        hits += usize::from(want.is_some() && want == got);
    };
    for (r, t) in reports.iter().zip(truth) {
        check(t.subject_id.clone(), r.subject_id.clone());
        let got = r.amounts.as_deref().unwrap_or(&[]);
        for (i, &a) in t.amounts.iter().flatten().enumerate() {
            check(Some(amount_str(a)), got.get(i).map(|&g| amount_str(g)));
        }
        let date = |d: &Option<DateRange>, end: bool| d.as_ref().map(|d| if end { d.end.clone() } else { d.start.clone() });
        check(date(&t.date_range, false), date(&r.date_range, false));
        check(date(&t.date_range, true), date(&r.date_range, true));
    }
    Ok(Some(hits as f64 / total as f64))
}

/// Share of reports that are compliant; `None` for no reports.
pub fn compliance_rate(reports: &[SarReport]) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().filter(|r| r.compliant).count() as f64 / reports.len() as f64)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

/// One row per case plus an `all` row with the pooled rates.
pub fn write_summary_csv(path: &Path, gates: &[GateResult], reports: &[SarReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "layer1", "layer2", "layer3", "overall", "compliant"])?;
    for (g, r) in gates.iter().zip(reports) {
        let rates = [g.layer_rate(1), g.layer_rate(2), g.layer_rate(3)];
        w.write_record([
            g.case_id.clone(),
            fmt_rate(rates[0]),
            fmt_rate(rates[1]),
            fmt_rate(rates[2]),
            fmt_rate(macro_mean(rates)),
            r.compliant.to_string(),
        ])?;
    }
    if !gates.is_empty() {
        let all = grounding_rate(gates)?;
        w.write_record([
            "all".to_string(),
            fmt_rate(all.layer1),
            fmt_rate(all.layer2),
            fmt_rate(all.layer3),
            fmt_rate(all.overall),
            fmt_rate(compliance_rate(reports)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
