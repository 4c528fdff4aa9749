//! Event-sourced durability: a JSONL event log plus JSON snapshots.
//!
//! Every committed case appears in the log as a group of events closed by
//! `CASE_COMMITTED`. Replay applies closed groups only, so a log cut off in
//! the middle of a case yields the state as of the previous version.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::PersistError;
use crate::governance::ToolOutcome;
use crate::model::Episode;
use crate::procedural::{PatchRejection, RulePatch};
use crate::state::{MemoryState, Snapshot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PatchResult {
    Applied { rule_id: String },
    Rejected { rejection: PatchRejection },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventBody {
    EpisodeAdded(Episode),
    RulePatched { case_index: u64, patch: RulePatch, result: PatchResult },
    OutcomesRecorded { rule_ids: Vec<String>, correct: bool },
    ToolOutcome(ToolOutcome),
    SnapshotMark { version: u64, file: String },
    CaseCommitted { case_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
    pub version_after: u64,
}

/// Parse one log line. `line_no` is 1-based and only used for errors.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<MemoryEvent, PersistError> {
    serde_json::from_str(line).map_err(|e| PersistError::Malformed { line: line_no, reason: e.to_string() })
}

/// Read every event, checking that `seq` runs 1, 2, 3, ... and that
/// `version_after` never decreases. A final line without a trailing
/// newline that fails to parse is treated as a torn write and dropped.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<MemoryEvent>, PersistError> {
    let mut reader = BufReader::new(reader);
    let mut events: Vec<MemoryEvent> = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| PersistError::Malformed { line: line_no + 1, reason: e.to_string() })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let event = match parse_event_line(line, line_no) {
            Ok(ev) => ev,
            Err(_) if !complete => {
                log::warn!("dropping torn final log line {line_no}");
                break;
            }
            Err(e) => return Err(e),
        };
        let last = events.last().map_or(0, |e| e.seq);
        if event.seq != last + 1 {
            return Err(PersistError::Malformed {
                line: line_no,
                reason: format!("seq {} does not follow {last}", event.seq),
            });
        }
        if let Some(prev) = events.last() {
            if event.version_after < prev.version_after {
                return Err(PersistError::Malformed {
                    line: line_no,
                    reason: format!("version_after {} decreases from {}", event.version_after, prev.version_after),
                });
            }
        }
        events.push(event);
    }
    Ok(events)
}

pub fn read_log_file(path: &Path) -> Result<Vec<MemoryEvent>, PersistError> {
    let file = File::open(path).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
    read_events(file)
}

/// Rebuild memory from an empty state.
pub fn replay(events: &[MemoryEvent], cfg: &EngineConfig) -> Result<MemoryState, PersistError> {
    replay_onto(MemoryState::new(cfg), events)
}

/// Apply the committed case groups in `events` that are newer than `base`.
pub fn replay_onto(base: MemoryState, events: &[MemoryEvent]) -> Result<MemoryState, PersistError> {
    let mut state = base;
    let mut group: Vec<(usize, &MemoryEvent)> = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        let line = i + 1;
        match &ev.body {
            EventBody::SnapshotMark { .. } => {}
            EventBody::CaseCommitted { .. } => {
                group.push((line, ev));
                if ev.version_after > state.version {
                    state = apply_group(&state, &group)?;
                }
                group.clear();
            }
            _ => group.push((line, ev)),
        }
    }
    if !group.is_empty() {
        log::warn!("ignoring {} uncommitted trailing events", group.len());
    }
    Ok(state)
}

fn apply_group(state: &MemoryState, group: &[(usize, &MemoryEvent)]) -> Result<MemoryState, PersistError> {
    let mut next = state.clone();
    let diverged = |line: usize, reason: String| PersistError::Diverged { line, reason };
    for &(line, ev) in group {
        match &ev.body {
            EventBody::EpisodeAdded(ep) => {
                next.episodic.add_episode(ep.clone()).map_err(|e| diverged(line, e.to_string()))?;
            }
            EventBody::OutcomesRecorded { rule_ids, correct } => {
                let ids = rule_ids.iter().cloned().collect();
                next.procedural
                    .record_outcomes(&ids, *correct)
                    .map_err(|e| diverged(line, e.to_string()))?;
            }
            EventBody::RulePatched { case_index, patch, result } => {
                let got = next.procedural.apply_patch(patch, *case_index);
                match (result, got) {
                    (PatchResult::Applied { rule_id }, Ok(id)) if *rule_id == id => {}
                    (PatchResult::Rejected { .. }, Err(_)) => {}
                    (want, got) => {
                        return Err(diverged(line, format!("patch logged as {want:?} but replay gave {got:?}")));
                    }
                }
            }
            EventBody::ToolOutcome(o) => {
                next.governance.record_tool_outcome(o);
            }
            EventBody::CaseCommitted { .. } => {
                next.version += 1;
                if next.version != ev.version_after {
                    return Err(diverged(
                        line,
                        format!("commit reaches version {} but event says {}", next.version, ev.version_after),
                    ));
                }
            }
            EventBody::SnapshotMark { .. } => {}
        }
    }
    Ok(next)
}

/// Position in the log to roll back to if a commit is abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogMark {
    len: u64,
    seq: u64,
}

/// Append-only JSONL writer.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_seq: u64,
    len: u64,
    sync: bool,
}

impl EventLog {
    /// Open or create the log. An uncommitted tail left by a crash is cut
    /// off so that new cases start on a clean group boundary.
    pub fn open(path: &Path, sync: bool) -> Result<Self, PersistError> {
        let io = |source| PersistError::Io { path: path.to_path_buf(), source };
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path).map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        let events = read_events(text.as_bytes())?;
        // byte offset just past the last CASE_COMMITTED or SNAPSHOT_MARK line
        let (mut keep_len, mut keep_seq, mut offset) = (0u64, 0u64, 0u64);
        let mut parsed = events.iter();
        for line in text.split_inclusive('\n') {
            offset += line.len() as u64;
            if line.trim().is_empty() {
                continue;
            }
            let Some(ev) = parsed.next() else { break };
            if matches!(ev.body, EventBody::CaseCommitted { .. } | EventBody::SnapshotMark { .. }) {
                keep_len = offset;
                keep_seq = ev.seq;
            }
        }
        if keep_len < text.len() as u64 {
            log::warn!("truncating uncommitted tail of {}", path.display());
            file.set_len(keep_len).map_err(io)?;
        }
        file.seek(SeekFrom::Start(keep_len)).map_err(io)?;
        Ok(Self { path: path.to_path_buf(), file, last_seq: keep_seq, len: keep_len, sync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn mark(&self) -> LogMark {
        LogMark { len: self.len, seq: self.last_seq }
    }

    fn io(&self, source: std::io::Error) -> PersistError {
        PersistError::Io { path: self.path.clone(), source }
    }

    /// Append a single event; its seq must be exactly one past the last.
    pub fn append_event(&mut self, event: &MemoryEvent) -> Result<(), PersistError> {
        if event.seq != self.last_seq + 1 {
            return Err(PersistError::SeqGap { last: self.last_seq, got: event.seq });
        }
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        self.len += line.len() as u64;
        self.last_seq = event.seq;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), PersistError> {
        self.file.flush().map_err(|e| self.io(e))?;
        if self.sync {
            self.file.sync_data().map_err(|e| self.io(e))?;
        }
        Ok(())
    }

    /// Append all events of one commit and make them durable. On failure
    /// the log is rolled back to where it was.
    pub fn append_case(&mut self, bodies: &[EventBody], version_after: u64) -> Result<LogMark, PersistError> {
        let mark = self.mark();
        let result = (|| {
            for body in bodies {
                let ev = MemoryEvent { seq: self.last_seq + 1, body: body.clone(), version_after };
                self.append_event(&ev)?;
            }
            self.flush()
        })();
        if let Err(e) = result {
            self.rollback(mark)?;
            return Err(e);
        }
        Ok(mark)
    }

    /// Cut the log back to `mark`, discarding everything after it.
    pub fn rollback(&mut self, mark: LogMark) -> Result<(), PersistError> {
        self.file.set_len(mark.len).map_err(|e| self.io(e))?;
        self.file.seek(SeekFrom::Start(mark.len)).map_err(|e| self.io(e))?;
        self.len = mark.len;
        self.last_seq = mark.seq;
        Ok(())
    }
}

pub fn snapshot_to_string(memory: &MemoryState) -> String {
    let mut s = serde_json::to_string_pretty(&memory.to_snapshot()).expect("snapshot serializes");
    s.push('\n');
    s
}

pub fn snapshot_from_str(text: &str, cfg: &EngineConfig) -> Result<MemoryState, PersistError> {
    let snap: Snapshot = serde_json::from_str(text).map_err(|e| PersistError::Schema(e.to_string()))?;
    MemoryState::from_snapshot(snap, cfg).map_err(PersistError::Schema)
}

/// Write a snapshot atomically (temp file, fsync, rename).
pub fn save_snapshot(memory: &MemoryState, path: &Path) -> Result<(), PersistError> {
    let io = |source| PersistError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp).map_err(io)?;
        f.write_all(snapshot_to_string(memory).as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_snapshot(path: &Path, cfg: &EngineConfig) -> Result<MemoryState, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
    snapshot_from_str(&text, cfg)
}

pub fn snapshot_file_name(version: u64) -> String {
    format!("snapshot-{version:08}.json")
}

/// Latest snapshot in `dir` (by version in the file name), if any.
pub fn latest_snapshot(dir: &Path) -> Result<Option<PathBuf>, PersistError> {
    let io = |source| PersistError::Io { path: dir.to_path_buf(), source };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(v) = name
            .strip_prefix("snapshot-")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|v| v.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Latest snapshot in `dir` plus the committed log tail after it.
pub fn recover(dir: &Path, log_path: &Path, cfg: &EngineConfig) -> Result<MemoryState, PersistError> {
    let base = match latest_snapshot(dir)? {
        Some(p) => load_snapshot(&p, cfg)?,
        None => MemoryState::new(cfg),
    };
    let events = if log_path.exists() { read_log_file(log_path)? } else { Vec::new() };
    replay_onto(base, &events)
}
