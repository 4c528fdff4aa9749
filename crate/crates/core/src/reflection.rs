//! Post-feedback reflection and the atomic memory commit.
//!
//! A [`Reflector`] turns a finished case into a summary, a guideline, rule
//! patches and tool outcomes. [`ReflectionEngine`] calls the configured
//! backend exactly once per case and falls back to [`MockReflector`] when
//! the backend fails or returns something that does not validate.
//! [`commit_update`] then folds the result into a new [`MemoryState`].

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::EngineConfig;
use crate::error::{CommitError, PersistError, ReflectError};
use crate::governance::ToolOutcome;
use crate::model::{CaseDescriptor, Episode, Feedback, InteractionTrace};
use crate::persistence::{EventBody, PatchResult};
use crate::procedural::{PatchOp, PatchRejection, RulePatch};
use crate::state::MemoryState;

/// Everything reflection sees about one finished case.
#[derive(Debug, Clone, Copy)]
pub struct ReflectionInput<'a> {
    pub descriptor: &'a CaseDescriptor,
    pub trace: &'a InteractionTrace,
    pub predicted: &'a str,
    pub feedback: &'a Feedback,
    /// Rules that were in the context prefix for this case.
    pub active_rule_ids: &'a BTreeSet<String>,
    pub active_episode_ids: &'a [String],
    /// Known failure-mode labels for the case, when the stream carries them.
    pub failure_modes: &'a [String],
    pub case_index: u64,
    pub memory: &'a MemoryState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionOutput {
    pub summary: String,
    pub guideline: String,
    #[serde(default)]
    pub patches: Vec<RulePatch>,
    #[serde(default)]
    pub tool_outcomes: Vec<ToolOutcome>,
}

pub trait Reflector {
    fn name(&self) -> &str;
    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionOutput, ReflectError>;
}

/// Tool outcomes copied from the trace annotations.
pub fn annotated_outcomes(trace: &InteractionTrace) -> Vec<ToolOutcome> {
    trace
        .calls
        .iter()
        .filter_map(|c| c.outcome_annotation.map(|k| ToolOutcome::new(c.tool_id.clone(), k)))
        .collect()
}

/// Deterministic reflection policy over the textual case record.
#[derive(Debug, Clone)]
pub struct MockReflector {
    text_cap: usize,
}

impl Default for MockReflector {
    fn default() -> Self {
        Self { text_cap: 500 }
    }
}

impl MockReflector {
    pub fn new(text_cap: usize) -> Self {
        Self { text_cap }
    }

    pub fn rule_text(failure_mode: &str, truth: &str) -> String {
        format!("if case shows {failure_mode}, check for {truth}")
    }

    pub fn run(&self, input: &ReflectionInput<'_>) -> ReflectionOutput {
        let tags = if input.descriptor.finding_tags.is_empty() {
            "(none)".to_string()
        } else {
            input.descriptor.finding_tags.iter().cloned().collect::<Vec<_>>().join(", ")
        };
        let truth = &input.feedback.truth;
        let predicted = if input.predicted.trim().is_empty() { "(no answer)" } else { input.predicted };
        let mut patches = Vec::new();
        let (summary, guideline) = if input.feedback.correct {
            (format!("Answered correctly: {truth}"), format!("When tags {tags} present, {truth} was confirmed"))
        } else {
            let mut modes: Vec<&String> = input.failure_modes.iter().collect();
            modes.sort();
            modes.dedup();
            let uncovered = modes.into_iter().find(|mode| {
                let needle = mode.to_lowercase();
                !input.active_rule_ids.iter().any(|id| {
                    input
                        .memory
                        .procedural
                        .get(id)
                        .is_some_and(|r| r.text.to_lowercase().contains(&needle))
                })
            });
            if let Some(mode) = uncovered {
                let text: String = Self::rule_text(mode, truth).chars().take(self.text_cap).collect();
                let tags = input.descriptor.finding_tags.iter().map(String::as_str).chain([mode.as_str()]);
                patches.push(RulePatch::add(text, 1).with_tags(tags));
            }
            (format!("Missed: {truth}, answered: {predicted}"), format!("When tags {tags} present, consider {truth}"))
        };
        ReflectionOutput { summary, guideline, patches, tool_outcomes: annotated_outcomes(input.trace) }
    }
}

impl Reflector for MockReflector {
    fn name(&self) -> &str {
        "mock"
    }

    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionOutput, ReflectError> {
        Ok(self.run(input))
    }
}

pub const REMOTE_SYSTEM_PROMPT: &str = "You maintain the memory of a case-solving agent. Given one finished \
case, reply with a single JSON object and nothing else, using exactly these keys: \
\"summary\" (one sentence), \"guideline\" (one actionable sentence), \
\"patches\" (at most 3 objects, each {\"op\": \"ADD\"|\"EDIT\"|\"DELETE\"|\"REPRIORITIZE\", \
\"target_rule_id\"?: string, \"text\"?: string, \"priority\"?: 0|1|2}), \
\"tool_outcomes\" (objects {\"tool_id\": string, \"kind\": \"helpful\"|\"harmful\"|\"misuse\"}, only for tools in the trace).";

/// Chat-completion backend. Sends one request per case and expects the
/// assistant message content to be a strict [`ReflectionOutput`] object.
#[derive(Debug, Clone)]
pub struct RemoteReflector {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

pub const ENV_ENDPOINT: &str = "CASEMEM_REFLECT_URL";
pub const ENV_MODEL: &str = "CASEMEM_REFLECT_MODEL";
pub const ENV_API_KEY: &str = "CASEMEM_API_KEY";

impl RemoteReflector {
    pub fn from_env() -> Result<Self, ReflectError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| ReflectError::Config(format!("{ENV_ENDPOINT} not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-5-mini".to_string());
        Ok(Self {
            endpoint,
            model,
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn build_request(&self, input: &ReflectionInput<'_>) -> serde_json::Value {
        let active_rules: Vec<_> = input
            .active_rule_ids
            .iter()
            .filter_map(|id| input.memory.procedural.get(id))
            .map(|r| json!({"rule_id": r.rule_id, "priority": r.priority, "text": r.text}))
            .collect();
        let case = json!({
            "descriptor": input.descriptor,
            "trace": input.trace,
            "predicted": input.predicted,
            "truth": input.feedback.truth,
            "correct": input.feedback.correct,
            "active_rules": active_rules,
            "retrieved_episodes": input.active_episode_ids,
        });
        json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": REMOTE_SYSTEM_PROMPT},
                {"role": "user", "content": case.to_string()},
            ],
        })
    }

    /// Extract and strictly parse the reflection object from a
    /// chat-completion response body.
    pub fn parse_response(body: &str) -> Result<ReflectionOutput, ReflectError> {
        let v: serde_json::Value = serde_json::from_str(body).map_err(|e| ReflectError::Parse(e.to_string()))?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| ReflectError::Parse("missing choices[0].message.content".into()))?;
        serde_json::from_str(content.trim()).map_err(|e| ReflectError::Parse(e.to_string()))
    }
}

impl Reflector for RemoteReflector {
    fn name(&self) -> &str {
        "remote"
    }

    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionOutput, ReflectError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = self.build_request(input);
        let mut resp = req.send_json(&body).map_err(|e| ReflectError::Transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ReflectError::Transport(e.to_string()))?;
        Self::parse_response(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptySummary,
    EmptyGuideline,
    PatchCap { count: usize, cap: usize },
    Patch { index: usize, rejection: PatchRejection },
    UnknownTool { tool_id: String },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::EmptySummary => "empty_summary",
            Violation::EmptyGuideline => "empty_guideline",
            Violation::PatchCap { .. } => "patch_cap",
            Violation::Patch { rejection, .. } => rejection.code(),
            Violation::UnknownTool { .. } => "unknown_tool",
        }
    }
}

/// Check a reflection result against the case and the current memory.
/// Reports every violation found.
pub fn validate_output(output: &ReflectionOutput, input: &ReflectionInput<'_>, cfg: &EngineConfig) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if output.summary.trim().is_empty() {
        v.push(Violation::EmptySummary);
    }
    if output.guideline.trim().is_empty() {
        v.push(Violation::EmptyGuideline);
    }
    if output.patches.len() > cfg.patch_cap {
        v.push(Violation::PatchCap { count: output.patches.len(), cap: cfg.patch_cap });
    }
    for (index, patch) in output.patches.iter().enumerate() {
        for rejection in patch.check_shape(cfg.rule_text_cap) {
            v.push(Violation::Patch { index, rejection });
        }
        if patch.op != PatchOp::Add {
            if let Some(target) = &patch.target_rule_id {
                if !input.memory.procedural.contains(target) {
                    v.push(Violation::Patch { index, rejection: PatchRejection::UnknownRule { rule_id: target.clone() } });
                }
            }
        }
    }
    let tools = input.trace.tool_ids();
    for o in &output.tool_outcomes {
        if !tools.contains(o.tool_id.as_str()) {
            v.push(Violation::UnknownTool { tool_id: o.tool_id.clone() });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionStats {
    /// Backend invocations; one per reflected case.
    pub calls: u64,
    pub fallbacks: u64,
}

/// Wraps a backend with validation and the deterministic fallback.
pub struct ReflectionEngine {
    backend: Box<dyn Reflector + Send>,
    fallback: MockReflector,
    stats: ReflectionStats,
}

impl ReflectionEngine {
    pub fn new(backend: Box<dyn Reflector + Send>, cfg: &EngineConfig) -> Self {
        Self { backend, fallback: MockReflector::new(cfg.rule_text_cap), stats: ReflectionStats::default() }
    }

    pub fn mock(cfg: &EngineConfig) -> Self {
        Self::new(Box::new(MockReflector::new(cfg.rule_text_cap)), cfg)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn stats(&self) -> ReflectionStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ReflectionStats::default();
    }

    pub fn reflect(&mut self, input: &ReflectionInput<'_>, cfg: &EngineConfig) -> ReflectionOutput {
        self.stats.calls += 1;
        match self.backend.reflect(input) {
            Ok(out) => match validate_output(&out, input, cfg) {
                Ok(()) => return out,
                Err(violations) => {
                    let codes: Vec<_> = violations.iter().map(Violation::code).collect();
                    log::warn!("case {}: reflection output rejected ({}); using fallback", input.descriptor.case_id, codes.join(", "));
                }
            },
            Err(e) => log::warn!("case {}: {e}; using fallback", input.descriptor.case_id),
        }
        self.stats.fallbacks += 1;
        self.fallback.run(input)
    }
}

/// Points between commit sub-steps where a fault can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommitStep {
    EpisodeAdded,
    OutcomesRecorded,
    PatchesApplied,
    ToolOutcomesRecorded,
    VersionBumped,
    LogWritten,
}

impl CommitStep {
    pub const ALL: [CommitStep; 6] = [
        CommitStep::EpisodeAdded,
        CommitStep::OutcomesRecorded,
        CommitStep::PatchesApplied,
        CommitStep::ToolOutcomesRecorded,
        CommitStep::VersionBumped,
        CommitStep::LogWritten,
    ];
}

/// Called after each commit sub-step; an error aborts the commit.
pub trait CommitHook {
    fn after(&mut self, step: CommitStep) -> Result<(), PersistError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl CommitHook for NoFaults {
    fn after(&mut self, _step: CommitStep) -> Result<(), PersistError> {
        Ok(())
    }
}

/// The case-level facts a commit writes, without the memory snapshot.
#[derive(Debug, Clone, Copy)]
pub struct CommitInput<'a> {
    pub descriptor: &'a CaseDescriptor,
    pub trace: &'a InteractionTrace,
    pub predicted: &'a str,
    pub feedback: &'a Feedback,
    pub active_rule_ids: &'a BTreeSet<String>,
    pub case_index: u64,
}

impl<'a> From<&ReflectionInput<'a>> for CommitInput<'a> {
    fn from(i: &ReflectionInput<'a>) -> Self {
        Self {
            descriptor: i.descriptor,
            trace: i.trace,
            predicted: i.predicted,
            feedback: i.feedback,
            active_rule_ids: i.active_rule_ids,
            case_index: i.case_index,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Commit {
    pub state: MemoryState,
    /// Events describing the commit, in application order.
    pub events: Vec<EventBody>,
    pub skipped: Vec<(RulePatch, PatchRejection)>,
}

/// Build the successor of `memory`. The input state is never modified; on
/// error nothing of the new state escapes.
pub fn commit_update(
    memory: &MemoryState,
    input: CommitInput<'_>,
    output: &ReflectionOutput,
    hook: &mut dyn CommitHook,
) -> Result<Commit, CommitError> {
    let mut next = memory.clone();
    let mut events = Vec::new();
    let mut skipped = Vec::new();

    let episode = Episode {
        episode_id: input.descriptor.case_id.clone(),
        descriptor: input.descriptor.clone(),
        trace: input.trace.clone(),
        predicted: input.predicted.to_string(),
        truth: input.feedback.truth.clone(),
        summary: output.summary.clone(),
        guideline: output.guideline.clone(),
        correct: input.feedback.correct,
        case_index: input.case_index,
    };
    next.episodic.add_episode(episode.clone())?;
    events.push(EventBody::EpisodeAdded(episode));
    hook.after(CommitStep::EpisodeAdded)?;

    next.procedural.record_outcomes(input.active_rule_ids, input.feedback.correct)?;
    events.push(EventBody::OutcomesRecorded {
        rule_ids: input.active_rule_ids.iter().cloned().collect(),
        correct: input.feedback.correct,
    });
    hook.after(CommitStep::OutcomesRecorded)?;

    for patch in &output.patches {
        let result = match next.procedural.apply_patch(patch, input.case_index) {
            Ok(rule_id) => PatchResult::Applied { rule_id },
            Err(rejection) => {
                log::info!("case {}: skipping {} patch: {rejection}", input.descriptor.case_id, patch.op);
                skipped.push((patch.clone(), rejection.clone()));
                PatchResult::Rejected { rejection }
            }
        };
        events.push(EventBody::RulePatched { case_index: input.case_index, patch: patch.clone(), result });
    }
    hook.after(CommitStep::PatchesApplied)?;

    for outcome in &output.tool_outcomes {
        next.governance.record_tool_outcome(outcome);
        events.push(EventBody::ToolOutcome(outcome.clone()));
    }
    hook.after(CommitStep::ToolOutcomesRecorded)?;

    next.version += 1;
    events.push(EventBody::CaseCommitted { case_id: input.descriptor.case_id.clone() });
    hook.after(CommitStep::VersionBumped)?;

    Ok(Commit { state: next, events, skipped })
}
