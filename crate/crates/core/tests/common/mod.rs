//! Shared test support: independent reference implementations and random
//! memory/case generators.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use casemem::config::EngineConfig;
use casemem::context::{assemble, MemoryToggles};
use casemem::error::{CommitError, PersistError};
use casemem::handle::MemoryHandle;
use casemem::model::{
    normalize_descriptor, CaseDescriptor, Episode, Feedback, InteractionTrace, OutcomeKind, ProceduralRule, ToolCall,
    TrustLabel,
};
use casemem::persistence::EventLog;
use casemem::procedural::RulePatch;
use casemem::reflection::{annotated_outcomes, CommitHook, CommitInput, CommitStep, NoFaults, ReflectionOutput};
use casemem::state::MemoryState;

// ---------- reference implementations ----------

pub fn ref_tokens(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn ref_norm(text: &str) -> String {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    words.join(" ")
}

fn counts(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (usize, usize, usize) {
    let inter = a.iter().filter(|x| b.contains(*x)).count();
    (inter, a.len(), b.len())
}

pub fn ref_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let (i, la, lb) = counts(a, b);
    if la + lb - i == 0 {
        0.0
    } else {
        i as f64 / (la + lb - i) as f64
    }
}

pub fn ref_dice(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let (i, la, lb) = counts(a, b);
    if la + lb == 0 {
        0.0
    } else {
        2.0 * i as f64 / (la + lb) as f64
    }
}

pub fn ref_episode_score(q: &CaseDescriptor, e: &CaseDescriptor) -> f64 {
    if q.finding_tags == e.finding_tags && ref_norm(&q.question_text) == ref_norm(&e.question_text) {
        return 1.0;
    }
    0.6 * ref_jaccard(&q.finding_tags, &e.finding_tags)
        + 0.4 * ref_dice(&ref_tokens(&q.question_text), &ref_tokens(&e.question_text))
}

/// Full linear scan and sort.
pub fn ref_retrieve(q: &CaseDescriptor, episodes: &[Episode], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(f64, u64, String)> = episodes
        .iter()
        .map(|e| (ref_episode_score(q, &e.descriptor), e.case_index, e.episode_id.clone()))
        .filter(|(s, _, _)| *s > 0.0)
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().take(k).map(|(s, _, id)| (id, s)).collect()
}

pub fn ref_utility(uses: u64, wins: u64, total: u64, c: f64) -> f64 {
    let u = uses as f64;
    (wins as f64 + 1.0) / (u + 2.0) + c * (((total + 1) as f64).ln() / (u + 1.0)).sqrt()
}

pub fn ref_composite(rule: &ProceduralRule, q: &CaseDescriptor, lambda: f64, c: f64, total: u64) -> f64 {
    let mut qk = ref_tokens(&q.question_text);
    qk.extend(q.finding_tags.iter().cloned());
    let mut rk = ref_tokens(&rule.text);
    rk.extend(rule.tags.iter().cloned());
    let mu = ref_utility(rule.uses, rule.wins, total, c);
    lambda * ref_dice(&qk, &rk) + (1.0 - lambda) * f64::min(1.0, mu / 2.0)
}

/// Sort every rule by (not urgent, composite desc, id asc) and take `k_s`.
pub fn ref_select(rules: &[ProceduralRule], q: &CaseDescriptor, k_s: usize, lambda: f64, c: f64, total: u64) -> Vec<String> {
    let mut keyed: Vec<(bool, f64, &str)> = rules
        .iter()
        .map(|r| (r.priority.get() != 0, ref_composite(r, q, lambda, c, total), r.rule_id.as_str()))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.partial_cmp(&a.1).unwrap()).then(a.2.cmp(b.2)));
    keyed.into_iter().take(k_s).map(|(_, _, id)| id.to_string()).collect()
}

/// Integer-only labelling with the default thresholds.
pub fn ref_label(h: u64, x: u64, m: u64) -> TrustLabel {
    let n = h + x + m;
    if n >= 6 && x == 0 && 10 * h > 7 * n {
        TrustLabel::Trusted
    } else if n >= 10 && 10 * (2 * x + m) > 12 * n {
        TrustLabel::Avoid
    } else {
        TrustLabel::Caution
    }
}

// ---------- generators ----------

pub const WORDS: [&str; 10] = ["effusion", "left", "right", "lung", "base", "size", "heart", "rib", "apex", "shadow"];
pub const TAGS: [&str; 8] = ["effusion", "nodule", "edema", "mass", "device", "fracture", "opacity", "hilar"];
pub const TOOLS: [&str; 4] = ["classifier", "segmenter", "vqa", "report"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_descriptor(rng: &mut impl Rng, case_id: &str) -> CaseDescriptor {
    let n_words = rng.random_range(1..6);
    let words: Vec<&str> = (0..n_words).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let n_tags = rng.random_range(0..4);
    let tags: Vec<&str> = (0..n_tags).map(|_| *TAGS.choose(rng).unwrap()).collect();
    normalize_descriptor(case_id, &format!("{}?", words.join(" ")), tags, "cxr", None).unwrap()
}

pub fn random_episode(rng: &mut impl Rng, i: usize) -> Episode {
    let id = format!("e{i:05}");
    Episode {
        episode_id: id.clone(),
        descriptor: random_descriptor(rng, &id),
        trace: InteractionTrace::default(),
        predicted: "A".into(),
        truth: "A".into(),
        summary: "s".into(),
        guideline: "g".into(),
        correct: rng.random_bool(0.5),
        // repeated indices exercise the id tie-break
        case_index: rng.random_range(0..(i as u64 / 2 + 1)),
    }
}

pub fn random_rule(rng: &mut impl Rng, i: usize) -> ProceduralRule {
    let n_words = rng.random_range(1..5);
    let words: Vec<&str> = (0..n_words).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let uses = rng.random_range(0..6);
    let tags: BTreeSet<String> = (0..rng.random_range(0..3)).map(|_| TAGS.choose(rng).unwrap().to_string()).collect();
    ProceduralRule {
        rule_id: format!("r{i:04}"),
        text: format!("rule {i}: {}", words.join(" ")),
        priority: casemem::model::Priority::new(rng.random_range(0..3)).unwrap(),
        uses,
        wins: rng.random_range(0..=uses),
        created_at: i as u64,
        tags,
    }
}

fn random_trace(rng: &mut impl Rng) -> InteractionTrace {
    let mut calls = Vec::new();
    for t in TOOLS {
        if !rng.random_bool(0.6) {
            continue;
        }
        let kind = match rng.random_range(0..4) {
            0 => Some(OutcomeKind::Helpful),
            1 => Some(OutcomeKind::Harmful),
            2 => Some(OutcomeKind::Misuse),
            _ => None,
        };
        calls.push(ToolCall::new(t, "args", "out", kind).unwrap());
    }
    InteractionTrace { calls, reasoning_notes: String::new() }
}

fn random_patch(rng: &mut impl Rng, memory: &MemoryState) -> RulePatch {
    let existing: Vec<String> = memory.procedural.rules().map(|r| r.rule_id.clone()).collect();
    let target = if !existing.is_empty() && rng.random_bool(0.8) {
        existing.choose(rng).unwrap().clone()
    } else {
        "r999999.9".to_string()
    };
    // small text vocabulary so duplicate detection fires
    let text = format!("check {} {}", WORDS.choose(rng).unwrap(), TAGS.choose(rng).unwrap());
    match rng.random_range(0..10) {
        0..=4 => RulePatch::add(text, rng.random_range(0..3)).with_tags([*TAGS.choose(rng).unwrap()]),
        5 | 6 => RulePatch::edit(target, text),
        7 => RulePatch::delete(target),
        8 => RulePatch::reprioritize(target, rng.random_range(-1..4)),
        _ => RulePatch::add("", 1),
    }
}

/// Everything needed to commit one random case.
pub struct CaseInput {
    pub descriptor: CaseDescriptor,
    pub trace: InteractionTrace,
    pub predicted: String,
    pub feedback: Feedback,
    pub active: BTreeSet<String>,
    pub case_index: u64,
    pub output: ReflectionOutput,
}

impl CaseInput {
    pub fn commit_input(&self) -> CommitInput<'_> {
        CommitInput {
            descriptor: &self.descriptor,
            trace: &self.trace,
            predicted: &self.predicted,
            feedback: &self.feedback,
            active_rule_ids: &self.active,
            case_index: self.case_index,
        }
    }
}

/// A random case against the current memory, with unvalidated patches.
pub fn random_case(rng: &mut impl Rng, memory: &MemoryState, cfg: &EngineConfig, case_index: u64) -> CaseInput {
    let descriptor = random_descriptor(rng, &format!("case-{case_index:05}"));
    let prefix = assemble(&descriptor, memory, cfg, MemoryToggles::ALL);
    let trace = random_trace(rng);
    let predicted = if rng.random_bool(0.5) { "A" } else { "B" }.to_string();
    let truth = "A".to_string();
    let feedback = Feedback { correct: predicted == truth, truth };
    let patches = (0..rng.random_range(0..4)).map(|_| random_patch(rng, memory)).collect();
    let output = ReflectionOutput {
        summary: format!("summary {case_index}"),
        guideline: "guideline".into(),
        patches,
        tool_outcomes: annotated_outcomes(&trace),
    };
    CaseInput { descriptor, trace, predicted, feedback, active: prefix.active_rule_ids(), case_index, output }
}

/// Commit `n` random cases through `handle`.
pub fn drive(handle: &MemoryHandle, cfg: &EngineConfig, seed: u64, n: usize) -> Result<(), CommitError> {
    let mut rng = rng(seed);
    for _ in 0..n {
        let snap = handle.snapshot();
        let case = random_case(&mut rng, &snap, cfg, snap.version);
        handle.commit(case.commit_input(), &case.output, &mut NoFaults)?;
    }
    Ok(())
}

/// A durable handle in `dir` with the given snapshot interval.
pub fn durable_handle(dir: &Path, cfg: &EngineConfig) -> MemoryHandle {
    let log = EventLog::open(&dir.join("events.jsonl"), false).unwrap();
    MemoryHandle::with_log(MemoryState::new(cfg), log, Some(dir.to_path_buf()), cfg)
}

/// Fails once at `step`.
pub struct FailAt(pub Option<CommitStep>);

impl CommitHook for FailAt {
    fn after(&mut self, step: CommitStep) -> Result<(), PersistError> {
        if self.0 == Some(step) {
            self.0 = None;
            return Err(PersistError::Fault(format!("{step:?}")));
        }
        Ok(())
    }
}
