//! Shared domain types. Behavior here is limited to construction and
//! validation; mutation happens in the store modules.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::text::normalize_text;

/// Compact textual description of a case, used as the retrieval key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDescriptor {
    pub case_id: String,
    pub question_text: String,
    pub finding_tags: BTreeSet<String>,
    pub modality_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_notes: Option<String>,
}

/// Build a descriptor with normalized tags (trimmed, lowercased, deduplicated).
pub fn normalize_descriptor<I, S>(
    case_id: &str,
    question_text: &str,
    finding_tags: I,
    modality_tag: &str,
    aux_notes: Option<&str>,
) -> Result<CaseDescriptor, ModelError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if case_id.trim().is_empty() {
        return Err(ModelError::EmptyCaseId);
    }
    if question_text.trim().is_empty() {
        return Err(ModelError::EmptyQuestion);
    }
    Ok(CaseDescriptor {
        case_id: case_id.to_string(),
        question_text: question_text.to_string(),
        finding_tags: normalize_tags(finding_tags),
        modality_tag: modality_tag.trim().to_lowercase(),
        aux_notes: aux_notes.map(str::to_string),
    })
}

pub fn normalize_tags<I, S>(tags: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tags.into_iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Helpful,
    Harmful,
    Misuse,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeKind::Helpful => "helpful",
            OutcomeKind::Harmful => "harmful",
            OutcomeKind::Misuse => "misuse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub tool_id: String,
    pub args_summary: String,
    pub output_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_annotation: Option<OutcomeKind>,
}

impl ToolCall {
    pub fn new(tool_id: &str, args: &str, output: &str, outcome: Option<OutcomeKind>) -> Result<Self, ModelError> {
        if tool_id.trim().is_empty() {
            return Err(ModelError::EmptyToolId);
        }
        Ok(Self {
            tool_id: tool_id.to_string(),
            args_summary: args.to_string(),
            output_summary: output.to_string(),
            outcome_annotation: outcome,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionTrace {
    pub calls: Vec<ToolCall>,
    pub reasoning_notes: String,
}

impl InteractionTrace {
    pub fn tool_ids(&self) -> BTreeSet<&str> {
        self.calls.iter().map(|c| c.tool_id.as_str()).collect()
    }
}

/// One solved case as stored in episodic memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub episode_id: String,
    pub descriptor: CaseDescriptor,
    pub trace: InteractionTrace,
    pub predicted: String,
    pub truth: String,
    pub summary: String,
    pub guideline: String,
    pub correct: bool,
    pub case_index: u64,
}

/// Rule urgency; 0 is the most urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Priority(u8);

impl Priority {
    pub const URGENT: Priority = Priority(0);
    pub const NORMAL: Priority = Priority(1);
    pub const LOW: Priority = Priority(2);

    pub fn new(value: i64) -> Result<Self, ModelError> {
        match value {
            0..=2 => Ok(Priority(value as u8)),
            _ => Err(ModelError::PriorityOutOfRange(value)),
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for Priority {
    type Error = ModelError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Priority::new(v)
    }
}

impl From<Priority> for u8 {
    fn from(p: Priority) -> u8 {
        p.0
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProceduralRule {
    pub rule_id: String,
    pub text: String,
    pub priority: Priority,
    pub uses: u64,
    pub wins: u64,
    pub created_at: u64,
    pub tags: BTreeSet<String>,
}

impl ProceduralRule {
    pub fn validate(&self, text_cap: usize) -> Result<(), ModelError> {
        if self.wins > self.uses {
            return Err(ModelError::WinsExceedUses {
                rule_id: self.rule_id.clone(),
                wins: self.wins,
                uses: self.uses,
            });
        }
        validate_rule_text(&self.rule_id, &self.text, text_cap)
    }

    /// Key used for duplicate detection.
    pub fn normalized_text(&self) -> String {
        normalize_text(&self.text)
    }
}

pub(crate) fn validate_rule_text(rule_id: &str, text: &str, cap: usize) -> Result<(), ModelError> {
    if text.trim().is_empty() {
        return Err(ModelError::EmptyRuleText(rule_id.to_string()));
    }
    let len = text.chars().count();
    if len > cap {
        return Err(ModelError::RuleTextTooLong { rule_id: rule_id.to_string(), len, cap });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrustLabel {
    Avoid,
    Caution,
    Trusted,
}

impl fmt::Display for TrustLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustLabel::Avoid => "Avoid",
            TrustLabel::Caution => "Caution",
            TrustLabel::Trusted => "Trusted",
        })
    }
}

/// Per-tool outcome counters. The label is always derived from the counters
/// by the governance store and never set independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernanceRecord {
    pub tool_id: String,
    pub n_helpful: u64,
    pub n_harmful: u64,
    pub n_misuse: u64,
    pub label: TrustLabel,
}

impl GovernanceRecord {
    pub fn total(&self) -> u64 {
        self.n_helpful + self.n_harmful + self.n_misuse
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub truth: String,
    pub correct: bool,
}

/// Normalized exact match: case-insensitive, whitespace-collapsed.
pub fn grade(predicted: &str, truth: &str) -> bool {
    normalize_text(predicted) == normalize_text(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_tags_are_normalized() {
        let d = normalize_descriptor("c1", "Is there effusion?", ["Effusion", "effusion "], "cxr", None).unwrap();
        assert_eq!(d.finding_tags.len(), 1);
        assert!(d.finding_tags.contains("effusion"));
    }

    #[test]
    fn descriptor_empty_tags_pass() {
        let d = normalize_descriptor("c2", "Q", Vec::<String>::new(), "cxr", None).unwrap();
        assert!(d.finding_tags.is_empty());
    }

    #[test]
    fn descriptor_rejects_empty_ids() {
        assert_eq!(
            normalize_descriptor("", "Q", ["a"], "cxr", None),
            Err(ModelError::EmptyCaseId)
        );
        assert_eq!(
            normalize_descriptor("c", "  ", ["a"], "cxr", None),
            Err(ModelError::EmptyQuestion)
        );
    }

    #[test]
    fn descriptor_is_deterministic() {
        let a = normalize_descriptor("c", "Q", ["b", "A", "a"], "CXR", None).unwrap();
        let b = normalize_descriptor("c", "Q", ["a", "b"], "cxr", None).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn tags_serialize_sorted() {
        let d = normalize_descriptor("c", "Q", ["zeta", "alpha"], "cxr", None).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains(r#""finding_tags":["alpha","zeta"]"#), "{json}");
    }

    #[test]
    fn priority_range() {
        assert!(Priority::new(0).is_ok());
        assert!(Priority::new(2).is_ok());
        assert_eq!(Priority::new(5), Err(ModelError::PriorityOutOfRange(5)));
        assert!(serde_json::from_str::<Priority>("3").is_err());
        assert_eq!(serde_json::from_str::<Priority>("1").unwrap(), Priority::NORMAL);
    }

    #[test]
    fn outcome_labels_exact() {
        assert_eq!(serde_json::to_string(&OutcomeKind::Misuse).unwrap(), "\"misuse\"");
        assert!(serde_json::from_str::<OutcomeKind>("\"unknown\"").is_err());
        assert!(ToolCall::new("", "", "", None).is_err());
    }

    #[test]
    fn rule_invariants() {
        let mut r = ProceduralRule {
            rule_id: "r".into(),
            text: "check ribs".into(),
            priority: Priority::NORMAL,
            uses: 1,
            wins: 2,
            created_at: 0,
            tags: BTreeSet::new(),
        };
        assert!(matches!(r.validate(500), Err(ModelError::WinsExceedUses { .. })));
        r.wins = 1;
        assert!(r.validate(500).is_ok());
        r.text = "x".repeat(501);
        assert!(matches!(r.validate(500), Err(ModelError::RuleTextTooLong { .. })));
    }

    #[test]
    fn grading_normalizes_case_and_space() {
        assert!(grade(" b ", "B"));
        assert!(grade("Malignant  mass", "malignant mass"));
        assert!(!grade("A", "B"));
    }
}
