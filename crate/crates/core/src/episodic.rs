//! Append-only episode store with deterministic Top-K retrieval.
//!
//! Relevance between a query descriptor `q` and a stored episode `e` is
//!
//! ```text
//! s(q, e) = 0.6 * Jaccard(tags(q), tags(e)) + 0.4 * Dice(tokens(q), tokens(e))
//! ```
//!
//! except that two descriptors with equal tag sets and equal normalized
//! question text score exactly 1.0.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::model::{CaseDescriptor, Episode};
use crate::text::{dice, jaccard, normalize_text, tokens};

pub const TAG_WEIGHT: f64 = 0.6;
pub const TEXT_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub episode_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Lexical relevance in [0, 1].
pub fn score_episode(query: &CaseDescriptor, episode: &Episode) -> f64 {
    score_descriptors(query, &episode.descriptor)
}

pub fn score_descriptors(a: &CaseDescriptor, b: &CaseDescriptor) -> f64 {
    score_with_cache(a, &tokens(&a.question_text), &normalize_text(&a.question_text), b)
}

/// Total order on hits: score descending, then case index, then id.
pub(crate) fn hit_order(a: (f64, &Episode), b: (f64, &Episode)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.case_index.cmp(&b.1.case_index))
        .then_with(|| a.1.episode_id.cmp(&b.1.episode_id))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodicStore {
    episodes: Vec<Episode>,
    index: BTreeMap<String, usize>,
}

impl EpisodicStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn get(&self, episode_id: &str) -> Option<&Episode> {
        self.index.get(episode_id).map(|&i| &self.episodes[i])
    }

    pub fn contains(&self, episode_id: &str) -> bool {
        self.index.contains_key(episode_id)
    }

    /// Episodes in insertion order.
    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn add_episode(&mut self, episode: Episode) -> Result<String, StoreError> {
        if self.index.contains_key(&episode.episode_id) {
            return Err(StoreError::DuplicateEpisode(episode.episode_id));
        }
        let id = episode.episode_id.clone();
        self.index.insert(id.clone(), self.episodes.len());
        self.episodes.push(episode);
        Ok(id)
    }

    /// At most `k` positive-score episodes, best first.
    pub fn retrieve_top_k(&self, query: &CaseDescriptor, k: usize) -> Vec<RetrievalHit> {
        if k == 0 {
            return Vec::new();
        }
        let query_tokens = tokens(&query.question_text);
        let query_norm = normalize_text(&query.question_text);
        let mut scored: Vec<(f64, &Episode)> = self
            .episodes
            .iter()
            .map(|e| (score_with_cache(query, &query_tokens, &query_norm, &e.descriptor), e))
            .filter(|(s, _)| *s > 0.0)
            .collect();
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, |a, b| hit_order(*a, *b));
            scored.truncate(take);
        }
        scored.sort_by(|a, b| hit_order(*a, *b));
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, e))| RetrievalHit {
                episode_id: e.episode_id.clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn from_episodes(episodes: Vec<Episode>) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for e in episodes {
            store.add_episode(e)?;
        }
        Ok(store)
    }
}

fn score_with_cache(
    query: &CaseDescriptor,
    query_tokens: &std::collections::BTreeSet<String>,
    query_norm: &str,
    other: &CaseDescriptor,
) -> f64 {
    if query.finding_tags == other.finding_tags && query_norm == normalize_text(&other.question_text) {
        return 1.0;
    }
    TAG_WEIGHT * jaccard(&query.finding_tags, &other.finding_tags)
        + TEXT_WEIGHT * dice(query_tokens, &tokens(&other.question_text))
}

impl Serialize for EpisodicStore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.episodes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpisodicStore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let episodes = Vec::<Episode>::deserialize(d)?;
        EpisodicStore::from_episodes(episodes).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_descriptor, InteractionTrace};

    fn episode(id: &str, idx: u64, q: &str, tags: &[&str]) -> Episode {
        Episode {
            episode_id: id.into(),
            descriptor: normalize_descriptor(id, q, tags.iter().copied(), "cxr", None).unwrap(),
            trace: InteractionTrace::default(),
            predicted: "A".into(),
            truth: "A".into(),
            summary: "s".into(),
            guideline: "g".into(),
            correct: true,
            case_index: idx,
        }
    }

    fn query(q: &str, tags: &[&str]) -> CaseDescriptor {
        normalize_descriptor("q", q, tags.iter().copied(), "cxr", None).unwrap()
    }

    #[test]
    fn add_and_duplicate() {
        let mut s = EpisodicStore::new();
        s.add_episode(episode("e1", 0, "x", &[])).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(
            s.add_episode(episode("e1", 1, "y", &[])),
            Err(StoreError::DuplicateEpisode("e1".into()))
        );
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn hundred_distinct_all_retrievable() {
        let mut s = EpisodicStore::new();
        for i in 0..100 {
            s.add_episode(episode(&format!("e{i}"), i, "q", &[])).unwrap();
        }
        assert_eq!(s.len(), 100);
        for i in 0..100 {
            assert_eq!(s.get(&format!("e{i}")).unwrap().case_index, i);
        }
    }

    #[test]
    fn score_identity_disjoint_and_mixed() {
        let e = episode("e", 0, "Is there effusion?", &["effusion", "pleural"]);
        assert_eq!(score_episode(&e.descriptor, &e), 1.0);

        let a = episode("a", 0, "x?", &["a"]);
        assert_eq!(score_episode(&query("y?", &["b"]), &a), 0.0);

        let q = query("Is there effusion?", &["effusion"]);
        let s = score_episode(&q, &e);
        assert!((s - 0.70).abs() < 1e-12, "{s}");
    }

    #[test]
    fn identity_clause_without_tags() {
        let e = episode("e", 0, "?", &[]);
        assert_eq!(score_episode(&query("?", &[]), &e), 1.0);
        assert_eq!(score_episode(&query("!", &[]), &e), 0.0);
    }

    #[test]
    fn empty_store_retrieves_nothing() {
        assert!(EpisodicStore::new().retrieve_top_k(&query("x", &["a"]), 5).is_empty());
    }

    #[test]
    fn identical_descriptor_ranks_first() {
        let mut s = EpisodicStore::new();
        s.add_episode(episode("e0", 0, "pleural effusion left", &["effusion"])).unwrap();
        s.add_episode(episode("e1", 1, "is there effusion", &["effusion", "rib"])).unwrap();
        s.add_episode(episode("e2", 2, "cardiac size", &["heart"])).unwrap();
        let hits = s.retrieve_top_k(&query("is there effusion", &["effusion", "rib"]), 5);
        assert_eq!(hits[0].episode_id, "e1");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[0].rank, 1);
        // zero-score episode excluded
        assert!(hits.iter().all(|h| h.episode_id != "e2"));
    }

    #[test]
    fn ties_break_by_case_index_then_id() {
        let mut s = EpisodicStore::new();
        s.add_episode(episode("b", 5, "same", &["t"])).unwrap();
        s.add_episode(episode("a", 5, "same", &["t"])).unwrap();
        s.add_episode(episode("c", 1, "same", &["t"])).unwrap();
        let ids: Vec<_> = s
            .retrieve_top_k(&query("same", &["t"]), 3)
            .into_iter()
            .map(|h| h.episode_id)
            .collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn json_roundtrip_keeps_order_and_rejects_dupes() {
        let mut s = EpisodicStore::new();
        s.add_episode(episode("z", 0, "q", &[])).unwrap();
        s.add_episode(episode("a", 1, "q", &[])).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: EpisodicStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.episodes()[0].episode_id, "z");

        let dup = format!("[{0},{0}]", serde_json::to_string(&s.episodes()[0]).unwrap());
        assert!(serde_json::from_str::<EpisodicStore>(&dup).is_err());
    }
}
