//! The versioned triple of stores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::episodic::EpisodicStore;
use crate::governance::GovernanceStore;
use crate::model::{Episode, GovernanceRecord, ProceduralRule};
use crate::procedural::ProceduralStore;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub episodic: EpisodicStore,
    pub procedural: ProceduralStore,
    pub governance: GovernanceStore,
    pub version: u64,
}

impl MemoryState {
    pub fn new(cfg: &EngineConfig) -> Self {
        Self {
            episodic: EpisodicStore::new(),
            procedural: ProceduralStore::new(cfg.rule_cap, cfg.rule_text_cap),
            governance: GovernanceStore::new(cfg.governance_thresholds()),
            version: 0,
        }
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            version: self.version,
            episodic: self.episodic.episodes().to_vec(),
            procedural: self.procedural.rules().cloned().collect(),
            governance: self.governance.records().clone(),
        }
    }

    pub fn from_snapshot(snap: Snapshot, cfg: &EngineConfig) -> Result<Self, String> {
        Ok(Self {
            episodic: EpisodicStore::from_episodes(snap.episodic).map_err(|e| e.to_string())?,
            procedural: ProceduralStore::from_rules(snap.procedural, cfg.rule_cap, cfg.rule_text_cap)?,
            governance: GovernanceStore::from_records(snap.governance, cfg.governance_thresholds())?,
            version: snap.version,
        })
    }
}

/// Serialized form of a [`MemoryState`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub version: u64,
    pub episodic: Vec<Episode>,
    pub procedural: Vec<ProceduralRule>,
    pub governance: BTreeMap<String, GovernanceRecord>,
}
