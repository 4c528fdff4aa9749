//! Engine configuration. Every tunable number used by the stores, the
//! assembler and the update cycle lives here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub const DEFAULT_BASE_PROTOCOL: &str = "Answer the case question. Use the memory sections below as \
advisory context: tool guidance, procedural rules, and prior episodes. Choose exactly one option.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Episodic Top-K.
    pub k: usize,
    /// Procedural rule budget per case.
    pub k_s: usize,
    /// Weight of relevance in the composite rule score.
    pub lambda: f64,
    /// Scale of the exploration bonus in rule utility.
    pub exploration_c: f64,
    pub char_budget: usize,
    pub rule_cap: usize,
    pub trusted_rate: f64,
    pub avoid_rate: f64,
    pub trusted_min_n: u64,
    pub avoid_min_n: u64,
    pub snapshot_interval: u64,
    pub patch_cap: usize,
    pub rule_text_cap: usize,
    pub base_protocol: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            k_s: 5,
            lambda: 0.5,
            exploration_c: 0.5,
            char_budget: 8000,
            rule_cap: 200,
            trusted_rate: 0.70,
            avoid_rate: 0.60,
            trusted_min_n: 6,
            avoid_min_n: 10,
            snapshot_interval: 50,
            patch_cap: 3,
            rule_text_cap: 500,
            base_protocol: DEFAULT_BASE_PROTOCOL.to_string(),
        }
    }
}

impl EngineConfig {
    /// Load from a JSON file, or return defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_json(&text)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        cfg.log_threshold_overrides();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &'static str, reason: impl Into<String>) -> ConfigError {
            ConfigError::OutOfRange { key, reason: reason.into() }
        }
        if self.k == 0 {
            return Err(bad("k", "must be >= 1"));
        }
        if self.k_s == 0 {
            return Err(bad("k_s", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad("lambda", format!("{} not in [0, 1]", self.lambda)));
        }
        if !(self.exploration_c.is_finite() && self.exploration_c >= 0.0) {
            return Err(bad("exploration_c", "must be finite and >= 0"));
        }
        for (key, v) in [("trusted_rate", self.trusted_rate), ("avoid_rate", self.avoid_rate)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(bad(key, format!("{v} not in (0, 1)")));
            }
        }
        if self.trusted_min_n == 0 {
            return Err(bad("trusted_min_n", "must be >= 1"));
        }
        if self.avoid_min_n == 0 {
            return Err(bad("avoid_min_n", "must be >= 1"));
        }
        if self.rule_cap == 0 {
            return Err(bad("rule_cap", "must be >= 1"));
        }
        if self.snapshot_interval == 0 {
            return Err(bad("snapshot_interval", "must be >= 1"));
        }
        if self.patch_cap == 0 {
            return Err(bad("patch_cap", "must be >= 1"));
        }
        if self.rule_text_cap == 0 {
            return Err(bad("rule_text_cap", "must be >= 1"));
        }
        let floor = crate::context::min_char_budget();
        if self.char_budget < floor {
            return Err(bad("char_budget", format!("must be >= {floor} (size of the empty section skeleton)")));
        }
        Ok(())
    }

    fn log_threshold_overrides(&self) {
        let d = Self::default();
        if self.trusted_rate != d.trusted_rate
            || self.avoid_rate != d.avoid_rate
            || self.trusted_min_n != d.trusted_min_n
            || self.avoid_min_n != d.avoid_min_n
        {
            log::warn!(
                "governance thresholds overridden: trusted_rate={} avoid_rate={} trusted_min_n={} avoid_min_n={}",
                self.trusted_rate,
                self.avoid_rate,
                self.trusted_min_n,
                self.avoid_min_n
            );
        }
    }

    pub fn governance_thresholds(&self) -> crate::governance::Thresholds {
        crate::governance::Thresholds {
            trusted_rate: self.trusted_rate,
            avoid_rate: self.avoid_rate,
            trusted_min_n: self.trusted_min_n,
            avoid_min_n: self.avoid_min_n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_no_file() {
        let cfg = EngineConfig::load(None).unwrap();
        assert_eq!(cfg, EngineConfig::default());
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.k_s, 5);
        assert_eq!(cfg.char_budget, 8000);
    }

    #[test]
    fn default_thresholds_match_published_values() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.trusted_rate, 0.70);
        assert_eq!(cfg.avoid_rate, 0.60);
        assert_eq!(cfg.trusted_min_n, 6);
        assert_eq!(cfg.avoid_min_n, 10);
    }

    #[test]
    fn partial_override_keeps_defaults() {
        let cfg = EngineConfig::from_json(r#"{"k": 1}"#).unwrap();
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.k_s, 5);
    }

    #[test]
    fn out_of_range_names_key() {
        let err = EngineConfig::from_json(r#"{"trusted_rate": 1.5}"#).unwrap_err();
        match err {
            ConfigError::OutOfRange { key, .. } => assert_eq!(key, "trusted_rate"),
            other => panic!("unexpected {other:?}"),
        }
        let err = EngineConfig::from_json(r#"{"k": 0}"#).unwrap_err();
        assert!(err.to_string().contains("`k`"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            EngineConfig::from_json(r#"{"kk": 3}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn tiny_budget_rejected() {
        let err = EngineConfig::from_json(r#"{"char_budget": 10}"#).unwrap_err();
        assert!(err.to_string().contains("char_budget"));
    }
}
