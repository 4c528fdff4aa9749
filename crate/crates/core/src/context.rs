//! Per-case context prefix: base protocol, tool guidance, selected rules and
//! retrieved episodes, in that order, within a character budget.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::model::{CaseDescriptor, Priority};
use crate::procedural::SelectionParams;
use crate::state::MemoryState;

pub const MARK_BASE: &str = "=== BASE PROTOCOL ===";
pub const MARK_GOVERNANCE: &str = "=== GOVERNANCE ===";
pub const MARK_PROCEDURAL: &str = "=== PROCEDURAL ===";
pub const MARK_EPISODES: &str = "=== EPISODES ===";
pub const MARK_END: &str = "=== END ===";
pub const PRIOR_FAILURE: &str = "PRIOR FAILURE";

/// Which stores are read when assembling. Writes are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryToggles {
    pub episodic: bool,
    pub procedural: bool,
    pub governance: bool,
}

impl MemoryToggles {
    pub const ALL: MemoryToggles = MemoryToggles { episodic: true, procedural: true, governance: true };
    pub const NONE: MemoryToggles = MemoryToggles { episodic: false, procedural: false, governance: false };

    /// Parse a comma list over `e`, `s`, `g` (also `none` / `all`).
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut t = Self::NONE;
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "e" | "episodic" => t.episodic = true,
                "s" | "procedural" => t.procedural = true,
                "g" | "governance" => t.governance = true,
                "all" => t = Self::ALL,
                "none" => {}
                other => return Err(format!("unknown memory store `{other}` (expected e, s, g)")),
            }
        }
        Ok(t)
    }
}

impl std::fmt::Display for MemoryToggles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<&str> = [(self.episodic, "e"), (self.procedural, "s"), (self.governance, "g")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLine {
    pub rule_id: String,
    pub priority: Priority,
    pub text: String,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBlock {
    pub episode_id: String,
    pub rank: usize,
    pub score: f64,
    pub finding_tags: BTreeSet<String>,
    pub summary: String,
    pub guideline: String,
    pub correct: bool,
    pub predicted: String,
    pub truth: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule_ids: Vec<String>,
    pub episode_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextPrefix {
    pub base_protocol: String,
    pub governance_lines: Vec<String>,
    pub procedural_lines: Vec<RuleLine>,
    pub episode_blocks: Vec<EpisodeBlock>,
}

impl ContextPrefix {
    /// Ids of every memory item included, in rendered order.
    pub fn provenance(&self) -> Provenance {
        Provenance {
            rule_ids: self.procedural_lines.iter().map(|r| r.rule_id.clone()).collect(),
            episode_ids: self.episode_blocks.iter().map(|e| e.episode_id.clone()).collect(),
        }
    }

    pub fn active_rule_ids(&self) -> BTreeSet<String> {
        self.procedural_lines.iter().map(|r| r.rule_id.clone()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&skeleton_piece(MARK_BASE));
        out.push_str(&base_piece(&self.base_protocol));
        out.push_str(&skeleton_piece(MARK_GOVERNANCE));
        for l in &self.governance_lines {
            out.push_str(&governance_piece(l));
        }
        out.push_str(&skeleton_piece(MARK_PROCEDURAL));
        for r in &self.procedural_lines {
            out.push_str(&rule_piece(r));
        }
        out.push_str(&skeleton_piece(MARK_EPISODES));
        for e in &self.episode_blocks {
            out.push_str(&episode_piece(e));
        }
        out.push_str(&skeleton_piece(MARK_END));
        out
    }

    pub fn rendered_len(&self) -> usize {
        skeleton_len()
            + char_len(&base_piece(&self.base_protocol))
            + self.governance_lines.iter().map(|l| char_len(&governance_piece(l))).sum::<usize>()
            + self.procedural_lines.iter().map(|r| char_len(&rule_piece(r))).sum::<usize>()
            + self.episode_blocks.iter().map(|e| char_len(&episode_piece(e))).sum::<usize>()
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn skeleton_piece(marker: &str) -> String {
    format!("{marker}\n")
}

fn skeleton_len() -> usize {
    [MARK_BASE, MARK_GOVERNANCE, MARK_PROCEDURAL, MARK_EPISODES, MARK_END]
        .iter()
        .map(|m| char_len(m) + 1)
        .sum()
}

fn base_piece(base: &str) -> String {
    format!("{}\n", one_line(base))
}

fn governance_piece(line: &str) -> String {
    format!("{}\n", one_line(line))
}

fn rule_piece(r: &RuleLine) -> String {
    format!("[{}] {}: {}\n", r.priority, r.rule_id, one_line(&r.text))
}

fn episode_piece(e: &EpisodeBlock) -> String {
    let outcome = if e.correct {
        "CORRECT".to_string()
    } else {
        format!("INCORRECT ({PRIOR_FAILURE})")
    };
    let tags = e.finding_tags.iter().cloned().collect::<Vec<_>>().join(", ");
    format!(
        "--- EPISODE {} {} ---\noutcome: {}\ntags: {}\nsummary: {}\nguideline: {}\nanswer: predicted={} truth={}\n",
        e.rank,
        one_line(&e.episode_id),
        outcome,
        tags,
        one_line(&e.summary),
        one_line(&e.guideline),
        one_line(&e.predicted),
        one_line(&e.truth),
    )
}

/// Length of a render with an empty base protocol and no sections.
pub fn min_char_budget() -> usize {
    skeleton_len() + 1
}

/// Build the prefix for `query` from the enabled stores, then shrink it
/// until it fits `cfg.char_budget`.
///
/// Items are dropped in this order: episodes from the lowest rank, rules of
/// priority 1-2 from the lowest composite score, priority-0 rules likewise,
/// governance lines from the bottom (Trusted first), and finally the base
/// protocol is cut at a character boundary.
pub fn assemble(query: &CaseDescriptor, memory: &MemoryState, cfg: &EngineConfig, toggles: MemoryToggles) -> ContextPrefix {
    let mut prefix = ContextPrefix { base_protocol: cfg.base_protocol.clone(), ..Default::default() };

    if toggles.governance {
        prefix.governance_lines = memory.governance.guidance_section(None);
    }
    if toggles.procedural {
        let params = SelectionParams {
            k_s: cfg.k_s,
            lambda: cfg.lambda,
            exploration_c: cfg.exploration_c,
            total_cases_seen: memory.version,
        };
        let sel = memory.procedural.select_rules(query, &params);
        prefix.procedural_lines = sel
            .selected
            .iter()
            .map(|id| {
                let rule = memory.procedural.get(id).expect("selected from store");
                RuleLine {
                    rule_id: id.clone(),
                    priority: rule.priority,
                    text: rule.text.clone(),
                    composite: sel.scores[id],
                }
            })
            .collect();
    }
    if toggles.episodic {
        prefix.episode_blocks = memory
            .episodic
            .retrieve_top_k(query, cfg.k)
            .into_iter()
            .map(|hit| {
                let e = memory.episodic.get(&hit.episode_id).expect("retrieved from store");
                EpisodeBlock {
                    episode_id: hit.episode_id,
                    rank: hit.rank,
                    score: hit.score,
                    finding_tags: e.descriptor.finding_tags.clone(),
                    summary: e.summary.clone(),
                    guideline: e.guideline.clone(),
                    correct: e.correct,
                    predicted: e.predicted.clone(),
                    truth: e.truth.clone(),
                }
            })
            .collect();
    }
    fit_budget(&mut prefix, cfg.char_budget);
    prefix
}

/// Drop items in truncation order until the render fits `budget`.
pub fn fit_budget(prefix: &mut ContextPrefix, budget: usize) {
    let mut len = prefix.rendered_len();
    while len > budget {
        if let Some(e) = prefix.episode_blocks.pop() {
            len -= char_len(&episode_piece(&e));
            continue;
        }
        if let Some(pos) = lowest_rule(&prefix.procedural_lines, false).or_else(|| lowest_rule(&prefix.procedural_lines, true)) {
            let r = prefix.procedural_lines.remove(pos);
            len -= char_len(&rule_piece(&r));
            continue;
        }
        if let Some(l) = prefix.governance_lines.pop() {
            len -= char_len(&governance_piece(&l));
            continue;
        }
        let excess = len - budget;
        let keep = prefix.base_protocol.chars().count().saturating_sub(excess);
        prefix.base_protocol = prefix.base_protocol.chars().take(keep).collect();
        len = prefix.rendered_len();
        if keep == 0 {
            break;
        }
    }
}

/// Position of the lowest-composite rule among urgent (`urgent = true`) or
/// non-urgent rules; later position wins ties.
fn lowest_rule(lines: &[RuleLine], urgent: bool) -> Option<usize> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, r)| (r.priority == Priority::URGENT) == urgent)
        .min_by(|(ia, a), (ib, b)| a.composite.total_cmp(&b.composite).then_with(|| ib.cmp(ia)))
        .map(|(i, _)| i)
}
