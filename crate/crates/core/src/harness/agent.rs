//! Agents answer one case given the assembled context prefix.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cases::CaseRecord;
use super::synth::{default_tool_profiles, ToolProfile};
use crate::context::ContextPrefix;
use crate::model::{grade, InteractionTrace, OutcomeKind, ToolCall};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentAnswer {
    pub predicted: String,
    pub trace: InteractionTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("agent failed: {0}")]
pub struct AgentError(pub String);

pub trait Agent {
    fn name(&self) -> &str;
    /// Configuration echoed into run reports.
    fn describe(&self) -> serde_json::Value;
    fn answer(&mut self, case: &CaseRecord, prefix: &ContextPrefix, rendered: &str) -> Result<AgentAnswer, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockAgentConfig {
    /// Error rate per failure mode when the mode is not covered by memory.
    pub base_error_rate: BTreeMap<String, f64>,
    /// Error rate for failure modes missing from `base_error_rate`.
    pub default_error_rate: f64,
    /// Error rate for cases without any failure mode.
    pub untagged_error_rate: f64,
    /// Residual error rate once memory covers the case's failure mode.
    pub covered_error_rate: f64,
    /// An active rule covers a mode when its text contains the mode tag.
    pub rules_cover: bool,
    /// A retrieved prior failure covers a mode when it carries the mode tag.
    pub episodes_cover: bool,
    pub tool_profiles: BTreeMap<String, ToolProfile>,
    pub seed: u64,
}

impl Default for MockAgentConfig {
    fn default() -> Self {
        Self {
            base_error_rate: BTreeMap::new(),
            default_error_rate: 0.5,
            untagged_error_rate: 0.2,
            covered_error_rate: 0.05,
            rules_cover: true,
            episodes_cover: true,
            tool_profiles: default_tool_profiles(),
            seed: 0,
        }
    }
}

impl MockAgentConfig {
    pub fn error_rate(&self, case: &CaseRecord) -> f64 {
        let modes = case.failure_modes();
        if modes.is_empty() {
            return self.untagged_error_rate;
        }
        modes
            .iter()
            .map(|m| self.base_error_rate.get(m).copied().unwrap_or(self.default_error_rate))
            .fold(0.0, f64::max)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic agent for the synthetic benchmark. All random draws for a
/// case depend only on the seed and the case id, so two runs over the same
/// cases differ only where memory coverage differs.
#[derive(Debug, Clone)]
pub struct MockAgent {
    cfg: MockAgentConfig,
}

impl MockAgent {
    pub fn new(cfg: MockAgentConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &MockAgentConfig {
        &self.cfg
    }

    /// Whether the prefix carries memory that addresses the case's failure mode.
    pub fn covered(&self, case: &CaseRecord, prefix: &ContextPrefix) -> bool {
        case.failure_modes().iter().any(|m| {
            let by_rule =
                self.cfg.rules_cover && prefix.procedural_lines.iter().any(|r| r.text.to_lowercase().contains(m.as_str()));
            let by_episode = self.cfg.episodes_cover
                && prefix.episode_blocks.iter().any(|e| !e.correct && e.finding_tags.contains(m));
            by_rule || by_episode
        })
    }

    fn wrong_answer(case: &CaseRecord, pick: u64) -> String {
        match &case.choices {
            Some(choices) => {
                let wrong: Vec<&String> = choices.iter().filter(|c| !grade(c, &case.answer_key)).collect();
                if wrong.is_empty() {
                    format!("not {}", case.answer_key)
                } else {
                    wrong[(pick % wrong.len() as u64) as usize].clone()
                }
            }
            None => format!("not {}", case.answer_key),
        }
    }
}

impl Agent for MockAgent {
    fn name(&self) -> &str {
        "mock"
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "name": "mock", "config": self.cfg })
    }

    fn answer(&mut self, case: &CaseRecord, prefix: &ContextPrefix, _rendered: &str) -> Result<AgentAnswer, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ fnv1a(case.case_id.as_bytes()));
        let u: f64 = rng.random();
        let pick: u64 = rng.random();
        let mut calls = Vec::with_capacity(self.cfg.tool_profiles.len());
        for (tool, p) in &self.cfg.tool_profiles {
            let v: f64 = rng.random();
            let outcome = if v < p.helpful {
                Some(OutcomeKind::Helpful)
            } else if v < p.helpful + p.harmful {
                Some(OutcomeKind::Harmful)
            } else if v < p.helpful + p.harmful + p.misuse {
                Some(OutcomeKind::Misuse)
            } else {
                None
            };
            let call = ToolCall::new(tool, &format!("case {}", case.case_id), "ok", outcome)
                .map_err(|e| AgentError(e.to_string()))?;
            calls.push(call);
        }

        let covered = self.covered(case, prefix);
        let rate = if covered { self.cfg.covered_error_rate } else { self.cfg.error_rate(case) };
        let correct = u >= rate;
        let predicted = if correct { case.answer_key.clone() } else { Self::wrong_answer(case, pick) };
        let notes = if covered { "memory covers this failure mode" } else { "answered from tool outputs" };
        Ok(AgentAnswer { predicted, trace: InteractionTrace { calls, reasoning_notes: notes.to_string() } })
    }
}
