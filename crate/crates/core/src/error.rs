use std::path::PathBuf;

use thiserror::Error;

/// Validation failures on domain values.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("case_id must be non-empty")]
    EmptyCaseId,
    #[error("question_text must be non-empty")]
    EmptyQuestion,
    #[error("tool_id must be non-empty")]
    EmptyToolId,
    #[error("priority {0} outside {{0,1,2}}")]
    PriorityOutOfRange(i64),
    #[error("rule {rule_id}: wins ({wins}) exceeds uses ({uses})")]
    WinsExceedUses { rule_id: String, wins: u64, uses: u64 },
    #[error("rule {0}: text must be non-empty")]
    EmptyRuleText(String),
    #[error("rule {rule_id}: text has {len} chars, cap is {cap}")]
    RuleTextTooLong { rule_id: String, len: usize, cap: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config key `{key}`: {reason}")]
    OutOfRange { key: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("duplicate episode id `{0}`")]
    DuplicateEpisode(String),
    #[error("unknown rule id `{0}`")]
    UnknownRule(String),
}

/// Errors while reading, writing or replaying persisted memory.
#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event seq {got} does not follow {last}")]
    SeqGap { last: u64, got: u64 },
    #[error("malformed event at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("replay diverged at line {line}: {reason}")]
    Diverged { line: usize, reason: String },
    #[error("snapshot schema error: {0}")]
    Schema(String),
    #[error("injected storage fault at {0}")]
    Fault(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {reason}")]
    Data { line: usize, reason: String },
    #[error("invalid synthetic stream spec: {0}")]
    InvalidSpec(String),
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("commit failed for case {case_id}: {source}")]
    Commit {
        case_id: String,
        #[source]
        source: CommitError,
    },
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("report parse error: {0}")]
    Report(String),
}

#[derive(Debug, Error)]
pub enum CommitError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReflectError {
    #[error("reflection backend transport error: {0}")]
    Transport(String),
    #[error("reflection response did not match schema: {0}")]
    Parse(String),
    #[error("reflection backend not configured: {0}")]
    Config(String),
}
