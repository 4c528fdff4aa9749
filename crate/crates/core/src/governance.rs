//! Per-tool trust tracking.
//!
//! With `n = helpful + harmful + misuse`:
//! * `Trusted` when `n >= 6`, `helpful / n > 0.70` and no harmful outcome;
//! * `Avoid` when `n >= 10` and `(harmful + 0.5 * misuse) / n > 0.60`;
//! * `Caution` otherwise, including tools never seen before.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{GovernanceRecord, OutcomeKind, TrustLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub trusted_rate: f64,
    pub avoid_rate: f64,
    pub trusted_min_n: u64,
    pub avoid_min_n: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { trusted_rate: 0.70, avoid_rate: 0.60, trusted_min_n: 6, avoid_min_n: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolOutcome {
    pub tool_id: String,
    pub kind: OutcomeKind,
}

impl ToolOutcome {
    pub fn new(tool_id: impl Into<String>, kind: OutcomeKind) -> Self {
        Self { tool_id: tool_id.into(), kind }
    }
}

pub fn derive_label(n_helpful: u64, n_harmful: u64, n_misuse: u64, t: &Thresholds) -> TrustLabel {
    let n = n_helpful + n_harmful + n_misuse;
    if n == 0 {
        return TrustLabel::Caution;
    }
    let total = n as f64;
    let trusted = n >= t.trusted_min_n && n_harmful == 0 && n_helpful as f64 / total > t.trusted_rate;
    if trusted {
        return TrustLabel::Trusted;
    }
    let effective_bad = (n_harmful as f64 + 0.5 * n_misuse as f64) / total;
    if n >= t.avoid_min_n && effective_bad > t.avoid_rate {
        return TrustLabel::Avoid;
    }
    TrustLabel::Caution
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernanceStore {
    records: BTreeMap<String, GovernanceRecord>,
    thresholds: Thresholds,
}

impl Default for GovernanceStore {
    fn default() -> Self {
        Self::new(Thresholds::default())
    }
}

impl GovernanceStore {
    pub fn new(thresholds: Thresholds) -> Self {
        Self { records: BTreeMap::new(), thresholds }
    }

    /// Rebuild from dumped records. Labels are recomputed from counters;
    /// a stored label that disagrees is repaired and reported.
    pub fn from_records(records: BTreeMap<String, GovernanceRecord>, thresholds: Thresholds) -> Result<Self, String> {
        let mut store = Self::new(thresholds);
        for (key, mut rec) in records {
            if key != rec.tool_id {
                return Err(format!("governance key `{key}` does not match tool_id `{}`", rec.tool_id));
            }
            let label = derive_label(rec.n_helpful, rec.n_harmful, rec.n_misuse, &thresholds);
            if label != rec.label {
                log::warn!("repairing label for tool {key}: stored {} but counters give {label}", rec.label);
                rec.label = label;
            }
            store.records.insert(key, rec);
        }
        Ok(store)
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn get(&self, tool_id: &str) -> Option<&GovernanceRecord> {
        self.records.get(tool_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &BTreeMap<String, GovernanceRecord> {
        &self.records
    }

    /// Effective label for a tool; unknown tools are `Caution`.
    pub fn label(&self, tool_id: &str) -> TrustLabel {
        self.records.get(tool_id).map_or(TrustLabel::Caution, |r| r.label)
    }

    pub fn record_tool_outcome(&mut self, outcome: &ToolOutcome) -> &GovernanceRecord {
        let thresholds = self.thresholds;
        let rec = self.records.entry(outcome.tool_id.clone()).or_insert_with(|| GovernanceRecord {
            tool_id: outcome.tool_id.clone(),
            n_helpful: 0,
            n_harmful: 0,
            n_misuse: 0,
            label: TrustLabel::Caution,
        });
        match outcome.kind {
            OutcomeKind::Helpful => rec.n_helpful += 1,
            OutcomeKind::Harmful => rec.n_harmful += 1,
            OutcomeKind::Misuse => rec.n_misuse += 1,
        }
        rec.label = derive_label(rec.n_helpful, rec.n_harmful, rec.n_misuse, &thresholds);
        rec
    }

    /// Guidance lines: a header, then one line per tool ordered Avoid,
    /// Caution, Trusted and by tool id within a label. With `toolset`
    /// given, only those tools are listed.
    pub fn guidance_section(&self, toolset: Option<&[String]>) -> Vec<String> {
        let mut lines = vec![GUIDANCE_HEADER.to_string()];
        let mut listed: Vec<&GovernanceRecord> = self
            .records
            .values()
            .filter(|r| toolset.is_none_or(|ts| ts.contains(&r.tool_id)))
            .collect();
        listed.sort_by(|a, b| a.label.cmp(&b.label).then_with(|| a.tool_id.cmp(&b.tool_id)));
        lines.extend(listed.into_iter().map(guidance_line));
        lines
    }
}

pub const GUIDANCE_HEADER: &str = "Tool trust (label: tool helpful/harmful/misuse):";

pub fn guidance_line(r: &GovernanceRecord) -> String {
    format!(
        "{}: {} helpful={} harmful={} misuse={}",
        r.label, r.tool_id, r.n_helpful, r.n_harmful, r.n_misuse
    )
}

impl Serialize for GovernanceStore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.records.serialize(s)
    }
}
