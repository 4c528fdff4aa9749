//! Procedural rule bank: patch-style edits, outcome statistics, and
//! utility-driven selection.
//!
//! Rule utility is a Laplace-smoothed win rate plus a UCB-style bonus:
//!
//! ```text
//! mu(rule) = (wins + 1) / (uses + 2) + c * sqrt(ln(total + 1) / (uses + 1))
//! ```
//!
//! Selection ranks by `lambda * relevance + (1 - lambda) * min(1, mu / 2)`,
//! always placing priority-0 rules first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, StoreError};
use crate::model::{validate_rule_text, CaseDescriptor, Priority, ProceduralRule};
use crate::text::{dice, normalize_text, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PatchOp {
    Add,
    Edit,
    Delete,
    Reprioritize,
}

impl fmt::Display for PatchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchOp::Add => "ADD",
            PatchOp::Edit => "EDIT",
            PatchOp::Delete => "DELETE",
            PatchOp::Reprioritize => "REPRIORITIZE",
        })
    }
}

/// One edit to the rule bank. `priority` is kept as a raw integer so that
/// out-of-range values survive parsing and can be reported by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePatch {
    pub op: PatchOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i64>,
    /// Relevance keys attached to a new rule (ADD only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
}

impl RulePatch {
    pub fn add(text: impl Into<String>, priority: i64) -> Self {
        Self {
            op: PatchOp::Add,
            target_rule_id: None,
            text: Some(text.into()),
            priority: Some(priority),
            tags: BTreeSet::new(),
        }
    }

    pub fn edit(target: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            op: PatchOp::Edit,
            target_rule_id: Some(target.into()),
            text: Some(text.into()),
            priority: None,
            tags: BTreeSet::new(),
        }
    }

    pub fn delete(target: impl Into<String>) -> Self {
        Self {
            op: PatchOp::Delete,
            target_rule_id: Some(target.into()),
            text: None,
            priority: None,
            tags: BTreeSet::new(),
        }
    }

    pub fn reprioritize(target: impl Into<String>, priority: i64) -> Self {
        Self {
            op: PatchOp::Reprioritize,
            target_rule_id: Some(target.into()),
            text: None,
            priority: Some(priority),
            tags: BTreeSet::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.tags = crate::model::normalize_tags(tags);
        self
    }

    /// Op-specific field checks that need no store access.
    pub fn check_shape(&self, text_cap: usize) -> Vec<PatchRejection> {
        let mut out = Vec::new();
        let needs_target = matches!(self.op, PatchOp::Edit | PatchOp::Delete | PatchOp::Reprioritize);
        let needs_text = matches!(self.op, PatchOp::Add | PatchOp::Edit);
        let needs_priority = matches!(self.op, PatchOp::Add | PatchOp::Reprioritize);
        if needs_target && self.target_rule_id.is_none() {
            out.push(PatchRejection::MissingField { field: "target_rule_id".into() });
        }
        if needs_text {
            match &self.text {
                None => out.push(PatchRejection::MissingField { field: "text".into() }),
                Some(t) => match validate_rule_text("", t, text_cap) {
                    Err(ModelError::EmptyRuleText(_)) => out.push(PatchRejection::EmptyText),
                    Err(ModelError::RuleTextTooLong { len, cap, .. }) => {
                        out.push(PatchRejection::TextTooLong { len, cap })
                    }
                    _ => {}
                },
            }
        }
        if needs_priority {
            match self.priority {
                None => out.push(PatchRejection::MissingField { field: "priority".into() }),
                Some(p) if Priority::new(p).is_err() => out.push(PatchRejection::PriorityOutOfRange { priority: p }),
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum PatchRejection {
    UnknownRule { rule_id: String },
    Duplicate { existing_rule_id: String },
    MissingField { field: String },
    PriorityOutOfRange { priority: i64 },
    TextTooLong { len: usize, cap: usize },
    EmptyText,
    StoreFull { cap: usize },
}

impl PatchRejection {
    pub fn code(&self) -> &'static str {
        match self {
            PatchRejection::UnknownRule { .. } => "unknown_rule",
            PatchRejection::Duplicate { .. } => "duplicate",
            PatchRejection::MissingField { .. } => "missing_field",
            PatchRejection::PriorityOutOfRange { .. } => "priority_out_of_range",
            PatchRejection::TextTooLong { .. } => "text_too_long",
            PatchRejection::EmptyText => "empty_text",
            PatchRejection::StoreFull { .. } => "store_full",
        }
    }
}

impl fmt::Display for PatchRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchRejection::UnknownRule { rule_id } => write!(f, "unknown_rule: {rule_id}"),
            PatchRejection::Duplicate { existing_rule_id } => write!(f, "duplicate of {existing_rule_id}"),
            PatchRejection::MissingField { field } => write!(f, "missing_field: {field}"),
            PatchRejection::PriorityOutOfRange { priority } => write!(f, "priority_out_of_range: {priority}"),
            PatchRejection::TextTooLong { len, cap } => write!(f, "text_too_long: {len} > {cap}"),
            PatchRejection::EmptyText => f.write_str("empty_text"),
            PatchRejection::StoreFull { cap } => write!(f, "store_full: cap {cap}"),
        }
    }
}

/// UCB-style rule utility. `total_cases_seen` should be at least `uses`.
pub fn utility(uses: u64, wins: u64, total_cases_seen: u64, exploration_c: f64) -> f64 {
    let uses_f = uses as f64;
    let mean = (wins as f64 + 1.0) / (uses_f + 2.0);
    let bonus = exploration_c * ((total_cases_seen as f64 + 1.0).ln() / (uses_f + 1.0)).sqrt();
    mean + bonus
}

pub fn rule_utility(rule: &ProceduralRule, total_cases_seen: u64, exploration_c: f64) -> f64 {
    utility(rule.uses, rule.wins, total_cases_seen, exploration_c)
}

/// Tokens of the rule text together with its tags.
pub fn rule_keys(rule: &ProceduralRule) -> BTreeSet<String> {
    let mut keys = tokens(&rule.text);
    keys.extend(rule.tags.iter().cloned());
    keys
}

/// Tokens of the question together with the finding tags.
pub fn query_keys(query: &CaseDescriptor) -> BTreeSet<String> {
    let mut keys = tokens(&query.question_text);
    keys.extend(query.finding_tags.iter().cloned());
    keys
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub k_s: usize,
    pub lambda: f64,
    pub exploration_c: f64,
    pub total_cases_seen: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProceduralStore {
    rules: BTreeMap<String, ProceduralRule>,
    cap: usize,
    text_cap: usize,
}

impl Default for ProceduralStore {
    fn default() -> Self {
        Self::new(200, 500)
    }
}

impl ProceduralStore {
    pub fn new(cap: usize, text_cap: usize) -> Self {
        Self { rules: BTreeMap::new(), cap, text_cap }
    }

    /// Rebuild from dumped rules, checking every rule invariant.
    pub fn from_rules(rules: Vec<ProceduralRule>, cap: usize, text_cap: usize) -> Result<Self, String> {
        let mut store = Self::new(cap, text_cap);
        let mut seen_text = BTreeMap::new();
        for r in rules {
            r.validate(text_cap).map_err(|e| e.to_string())?;
            if let Some(prev) = seen_text.insert(r.normalized_text(), r.rule_id.clone()) {
                return Err(format!("rules {prev} and {} have duplicate text", r.rule_id));
            }
            if store.rules.insert(r.rule_id.clone(), r).is_some() {
                return Err("duplicate rule_id".into());
            }
        }
        if store.rules.len() > cap {
            return Err(format!("{} rules exceed cap {cap}", store.rules.len()));
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, rule_id: &str) -> Option<&ProceduralRule> {
        self.rules.get(rule_id)
    }

    pub fn contains(&self, rule_id: &str) -> bool {
        self.rules.contains_key(rule_id)
    }

    /// Rules ordered by id.
    pub fn rules(&self) -> impl Iterator<Item = &ProceduralRule> {
        self.rules.values()
    }

    pub fn text_cap(&self) -> usize {
        self.text_cap
    }

    fn find_duplicate(&self, text: &str, except: Option<&str>) -> Option<&str> {
        let norm = normalize_text(text);
        self.rules
            .values()
            .find(|r| Some(r.rule_id.as_str()) != except && r.normalized_text() == norm)
            .map(|r| r.rule_id.as_str())
    }

    fn next_rule_id(&self, case_index: u64) -> String {
        (1u64..)
            .map(|i| format!("r{case_index:06}.{i}"))
            .find(|id| !self.rules.contains_key(id))
            .expect("unbounded id space")
    }

    fn target<'a>(&self, patch: &'a RulePatch) -> Result<&'a str, PatchRejection> {
        let id = patch
            .target_rule_id
            .as_deref()
            .ok_or(PatchRejection::MissingField { field: "target_rule_id".into() })?;
        if !self.rules.contains_key(id) {
            return Err(PatchRejection::UnknownRule { rule_id: id.to_string() });
        }
        Ok(id)
    }

    /// Apply one patch. Returns the id of the affected rule.
    pub fn apply_patch(&mut self, patch: &RulePatch, case_index: u64) -> Result<String, PatchRejection> {
        if let Some(first) = patch.check_shape(self.text_cap).into_iter().next() {
            return Err(first);
        }
        match patch.op {
            PatchOp::Add => {
                let text = patch.text.as_deref().unwrap_or_default();
                if let Some(existing) = self.find_duplicate(text, None) {
                    return Err(PatchRejection::Duplicate { existing_rule_id: existing.to_string() });
                }
                if self.rules.len() >= self.cap {
                    return Err(PatchRejection::StoreFull { cap: self.cap });
                }
                let rule_id = self.next_rule_id(case_index);
                let priority = Priority::new(patch.priority.unwrap_or_default()).expect("checked by shape");
                self.rules.insert(
                    rule_id.clone(),
                    ProceduralRule {
                        rule_id: rule_id.clone(),
                        text: text.to_string(),
                        priority,
                        uses: 0,
                        wins: 0,
                        created_at: case_index,
                        tags: patch.tags.clone(),
                    },
                );
                Ok(rule_id)
            }
            PatchOp::Edit => {
                let id = self.target(patch)?.to_string();
                let text = patch.text.as_deref().unwrap_or_default();
                if let Some(existing) = self.find_duplicate(text, Some(&id)) {
                    return Err(PatchRejection::Duplicate { existing_rule_id: existing.to_string() });
                }
                let rule = self.rules.get_mut(&id).expect("target checked");
                rule.text = text.to_string();
                rule.uses = 0;
                rule.wins = 0;
                Ok(id)
            }
            PatchOp::Delete => {
                let id = self.target(patch)?.to_string();
                self.rules.remove(&id);
                Ok(id)
            }
            PatchOp::Reprioritize => {
                let id = self.target(patch)?.to_string();
                let priority = Priority::new(patch.priority.unwrap_or_default()).expect("checked by shape");
                self.rules.get_mut(&id).expect("target checked").priority = priority;
                Ok(id)
            }
        }
    }

    /// Bump `uses` for every active rule and `wins` when `correct`.
    /// Rejects the whole update if any id is unknown.
    pub fn record_outcomes(&mut self, active: &BTreeSet<String>, correct: bool) -> Result<(), StoreError> {
        if let Some(missing) = active.iter().find(|id| !self.rules.contains_key(*id)) {
            return Err(StoreError::UnknownRule(missing.clone()));
        }
        for id in active {
            let rule = self.rules.get_mut(id).expect("checked above");
            rule.uses += 1;
            if correct {
                rule.wins += 1;
            }
        }
        Ok(())
    }

    pub fn composite(&self, rule: &ProceduralRule, query: &BTreeSet<String>, params: &SelectionParams) -> f64 {
        let relevance = dice(query, &rule_keys(rule));
        let mu = rule_utility(rule, params.total_cases_seen, params.exploration_c);
        params.lambda * relevance + (1.0 - params.lambda) * (mu / 2.0).min(1.0)
    }

    pub fn select_rules(&self, query: &CaseDescriptor, params: &SelectionParams) -> SelectionResult {
        let keys = query_keys(query);
        let mut urgent = Vec::new();
        let mut others = Vec::new();
        for rule in self.rules.values() {
            let score = self.composite(rule, &keys, params);
            if rule.priority == Priority::URGENT {
                urgent.push((score, rule.rule_id.as_str()));
            } else {
                others.push((score, rule.rule_id.as_str()));
            }
        }
        let order = |a: &(f64, &str), b: &(f64, &str)| -> Ordering { b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)) };
        urgent.sort_by(order);
        others.sort_by(order);
        let mut result = SelectionResult::default();
        for (score, id) in urgent.into_iter().chain(others).take(params.k_s) {
            result.selected.push(id.to_string());
            result.scores.insert(id.to_string(), score);
        }
        result
    }
}

impl Serialize for ProceduralStore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.rules.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_descriptor;

    fn store() -> ProceduralStore {
        ProceduralStore::new(200, 500)
    }

    fn params(k_s: usize, total: u64) -> SelectionParams {
        SelectionParams { k_s, lambda: 0.5, exploration_c: 0.5, total_cases_seen: total }
    }

    #[test]
    fn add_on_empty_store() {
        let mut s = store();
        let id = s.apply_patch(&RulePatch::add("check ribs adjacent to effusion", 1), 0).unwrap();
        assert_eq!(s.len(), 1);
        let r = s.get(&id).unwrap();
        assert_eq!((r.uses, r.wins), (0, 0));
        assert_eq!(r.priority, Priority::NORMAL);
    }

    #[test]
    fn delete_unknown_rejected() {
        let mut s = store();
        assert_eq!(
            s.apply_patch(&RulePatch::delete("ghost"), 0).unwrap_err().code(),
            "unknown_rule"
        );
    }

    #[test]
    fn duplicate_add_by_normalized_text() {
        let mut s = store();
        s.apply_patch(&RulePatch::add("Zoom posterior-lateral ribs", 1), 0).unwrap();
        let err = s.apply_patch(&RulePatch::add("  zoom   POSTERIOR-lateral ribs ", 2), 1).unwrap_err();
        assert_eq!(err.code(), "duplicate");
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn edit_resets_stats_reprioritize_keeps_them() {
        let mut s = store();
        let id = s.apply_patch(&RulePatch::add("a rule", 1), 0).unwrap();
        let active: BTreeSet<_> = [id.clone()].into();
        s.record_outcomes(&active, true).unwrap();
        s.record_outcomes(&active, false).unwrap();
        s.apply_patch(&RulePatch::reprioritize(&id, 0), 2).unwrap();
        let r = s.get(&id).unwrap();
        assert_eq!((r.uses, r.wins, r.priority), (2, 1, Priority::URGENT));
        s.apply_patch(&RulePatch::edit(&id, "a better rule"), 3).unwrap();
        let r = s.get(&id).unwrap();
        assert_eq!((r.uses, r.wins, r.text.as_str()), (0, 0, "a better rule"));
    }

    #[test]
    fn edit_into_duplicate_rejected() {
        let mut s = store();
        let a = s.apply_patch(&RulePatch::add("first", 1), 0).unwrap();
        s.apply_patch(&RulePatch::add("second", 1), 0).unwrap();
        assert_eq!(s.apply_patch(&RulePatch::edit(&a, "SECOND"), 1).unwrap_err().code(), "duplicate");
        // editing to its own text is fine
        assert!(s.apply_patch(&RulePatch::edit(&a, "First"), 1).is_ok());
    }

    #[test]
    fn shape_errors() {
        let mut s = store();
        let mut p = RulePatch::add("x", 1);
        p.priority = None;
        assert_eq!(s.apply_patch(&p, 0).unwrap_err(), PatchRejection::MissingField { field: "priority".into() });
        assert_eq!(
            s.apply_patch(&RulePatch::add("x", 7), 0).unwrap_err(),
            PatchRejection::PriorityOutOfRange { priority: 7 }
        );
        assert_eq!(
            s.apply_patch(&RulePatch::add("x".repeat(501), 1), 0).unwrap_err().code(),
            "text_too_long"
        );
        assert_eq!(s.apply_patch(&RulePatch::add("   ", 1), 0).unwrap_err(), PatchRejection::EmptyText);
    }

    #[test]
    fn cap_blocks_add_until_delete() {
        let mut s = ProceduralStore::new(2, 500);
        let a = s.apply_patch(&RulePatch::add("one", 1), 0).unwrap();
        s.apply_patch(&RulePatch::add("two", 1), 0).unwrap();
        assert_eq!(s.apply_patch(&RulePatch::add("three", 1), 1).unwrap_err().code(), "store_full");
        s.apply_patch(&RulePatch::delete(a), 1).unwrap();
        assert!(s.apply_patch(&RulePatch::add("three", 1), 1).is_ok());
    }

    #[test]
    fn rule_ids_are_unique_within_a_case() {
        let mut s = store();
        let a = s.apply_patch(&RulePatch::add("one", 1), 7).unwrap();
        let b = s.apply_patch(&RulePatch::add("two", 1), 7).unwrap();
        assert_eq!(a, "r000007.1");
        assert_eq!(b, "r000007.2");
    }

    #[test]
    fn utility_reference_values() {
        assert!((utility(0, 0, 0, 0.5) - 0.5).abs() < 1e-12);
        let expect = 0.5 + 0.5 * (8f64.ln()).sqrt();
        assert!((utility(0, 0, 7, 0.5) - expect).abs() < 1e-12);
        assert!((utility(0, 0, 7, 0.5) - 1.221).abs() < 5e-4);
        assert!((utility(10, 9, 100, 0.5) - 1.157).abs() < 5e-4);
    }

    #[test]
    fn utility_monotonicity() {
        for total in [10u64, 100, 1000] {
            for uses in 0..total {
                assert!(utility(uses + 1, 0, total, 0.5) < utility(uses, 0, total, 0.5));
                if uses >= 1 {
                    for wins in 0..uses {
                        assert!(utility(uses, wins + 1, total, 0.5) > utility(uses, wins, total, 0.5));
                    }
                }
            }
        }
    }

    #[test]
    fn exploration_property_by_enumeration() {
        for total in 8u64..=200 {
            let fresh = utility(0, 0, total, 0.5);
            for uses in 5u64..=50.min(total) {
                for wins in 0..=uses / 2 {
                    assert!(fresh >= utility(uses, wins, total, 0.5), "total={total} uses={uses} wins={wins}");
                }
            }
        }
    }

    #[test]
    fn record_outcomes_semantics() {
        let mut s = store();
        let r1 = s.apply_patch(&RulePatch::add("one", 1), 0).unwrap();
        let r2 = s.apply_patch(&RulePatch::add("two", 1), 0).unwrap();
        s.record_outcomes(&[r1.clone()].into(), true).unwrap();
        assert_eq!((s.get(&r1).unwrap().uses, s.get(&r1).unwrap().wins), (1, 1));
        s.record_outcomes(&[r1.clone(), r2.clone()].into(), false).unwrap();
        assert_eq!((s.get(&r1).unwrap().uses, s.get(&r1).unwrap().wins), (2, 1));
        assert_eq!((s.get(&r2).unwrap().uses, s.get(&r2).unwrap().wins), (1, 0));
        let before = s.clone();
        assert_eq!(
            s.record_outcomes(&[r1, "ghost".to_string()].into(), true),
            Err(StoreError::UnknownRule("ghost".into()))
        );
        assert_eq!(s, before);
    }

    #[test]
    fn selection_priority_zero_first() {
        let mut s = store();
        let q = normalize_descriptor("c", "pleural effusion with rib pain", ["effusion"], "cxr", None).unwrap();
        for i in 0..10 {
            s.apply_patch(&RulePatch::add(format!("pleural effusion rule {i}"), 2).with_tags(["effusion"]), 0)
                .unwrap();
        }
        let urgent = s.apply_patch(&RulePatch::add("unrelated urgent check", 0), 0).unwrap();
        let sel = s.select_rules(&q, &params(4, 5));
        assert_eq!(sel.selected.len(), 4);
        assert_eq!(sel.selected[0], urgent);
        assert_eq!(sel.scores.len(), 4);
    }

    #[test]
    fn selection_empty_store() {
        let q = normalize_descriptor("c", "q", ["a"], "cxr", None).unwrap();
        assert_eq!(store().select_rules(&q, &params(5, 0)), SelectionResult::default());
    }

    #[test]
    fn urgent_overflow_truncated_by_score() {
        let mut s = store();
        let q = normalize_descriptor("c", "alpha beta", Vec::<&str>::new(), "cxr", None).unwrap();
        let hi = s.apply_patch(&RulePatch::add("alpha beta", 0), 0).unwrap();
        s.apply_patch(&RulePatch::add("gamma", 0), 0).unwrap();
        s.apply_patch(&RulePatch::add("delta", 0), 0).unwrap();
        let sel = s.select_rules(&q, &params(1, 0));
        assert_eq!(sel.selected, vec![hi]);
    }

    #[test]
    fn every_rejection_round_trips() {
        let all = [
            PatchRejection::UnknownRule { rule_id: "r1".into() },
            PatchRejection::Duplicate { existing_rule_id: "r2".into() },
            PatchRejection::MissingField { field: "text".into() },
            PatchRejection::PriorityOutOfRange { priority: -4 },
            PatchRejection::TextTooLong { len: 600, cap: 500 },
            PatchRejection::EmptyText,
            PatchRejection::StoreFull { cap: 200 },
        ];
        for r in all {
            let text = serde_json::to_string(&r).unwrap();
            assert!(text.contains(&format!("\"reason\":\"{}\"", r.code())), "{text}");
            assert_eq!(serde_json::from_str::<PatchRejection>(&text).unwrap(), r);
        }
    }
}
