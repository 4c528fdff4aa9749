//! Run reports: per-case results, the cumulative accuracy curve, and
//! JSON / CSV emission.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::PermutationSummary;
use crate::config::EngineConfig;
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseResult {
    pub index: usize,
    pub case_id: String,
    pub predicted: String,
    pub truth: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_error: Option<String>,
    pub rule_ids: Vec<String>,
    pub episode_ids: Vec<String>,
    pub skipped_patches: usize,
    pub memory_version: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counters {
    pub assemble_calls: u64,
    pub agent_calls: u64,
    pub reflector_calls: u64,
    pub fallbacks: u64,
    pub commits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub engine: EngineConfig,
    pub memory: String,
    pub seed: u64,
    pub backend: String,
    pub agent: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub config: ReportConfig,
    pub cases: Vec<CaseResult>,
    /// Cumulative accuracy after each case.
    pub curve: Vec<f64>,
    pub correct: usize,
    pub final_accuracy: f64,
    pub counters: Counters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<PermutationSummary>,
}

impl RunReport {
    pub fn new(config: ReportConfig, cases: Vec<CaseResult>, counters: Counters) -> Self {
        let mut correct = 0;
        let curve = cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                correct += usize::from(c.correct);
                correct as f64 / (i + 1) as f64
            })
            .collect();
        let final_accuracy = if cases.is_empty() { 0.0 } else { correct as f64 / cases.len() as f64 };
        Self { config, cases, curve, correct, final_accuracy, counters, permutations: None }
    }

    /// Accuracy over cases `[from, to)`.
    pub fn window_accuracy(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.cases.len());
        if from >= to {
            return 0.0;
        }
        self.cases[from..to].iter().filter(|c| c.correct).count() as f64 / (to - from) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            _ => Err(HarnessError::UnknownFormat(s.to_string())),
        }
    }
}

pub const CSV_HEADER: [&str; 8] =
    ["index", "case_id", "correct", "cumulative_accuracy", "memory_version", "rules", "episodes", "predicted"];

pub fn render_report(report: &RunReport, format: ReportFormat) -> Result<String, HarnessError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Report(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => render_csv(report),
    }
}

/// One row per case and a final `summary` row holding the correct count and
/// final accuracy in the `correct` / `cumulative_accuracy` columns.
fn render_csv(report: &RunReport) -> Result<String, HarnessError> {
    let err = |e: csv::Error| HarnessError::Report(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(err)?;
    for (c, acc) in report.cases.iter().zip(&report.curve) {
        w.write_record([
            c.index.to_string(),
            c.case_id.clone(),
            c.correct.to_string(),
            acc.to_string(),
            c.memory_version.to_string(),
            c.rule_ids.join(" "),
            c.episode_ids.join(" "),
            c.predicted.clone(),
        ])
        .map_err(err)?;
    }
    w.write_record([
        "summary".to_string(),
        String::new(),
        report.correct.to_string(),
        report.final_accuracy.to_string(),
        report.cases.last().map(|c| c.memory_version.to_string()).unwrap_or_default(),
        String::new(),
        String::new(),
        String::new(),
    ])
    .map_err(err)?;
    let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
}

pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<(), HarnessError> {
    let text = render_report(report, format)?;
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub fn parse_report(text: &str) -> Result<RunReport, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
}

pub fn load_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    parse_report(&text)
}
