//! Shared, durable memory: readers take cheap snapshots while a single
//! writer builds and publishes the next version.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use crate::config::EngineConfig;
use crate::error::{CommitError, PersistError};
use crate::persistence::{save_snapshot, snapshot_file_name, EventBody, EventLog};
use crate::procedural::{PatchRejection, RulePatch};
use crate::reflection::{commit_update, CommitHook, CommitInput, CommitStep, ReflectionOutput};
use crate::state::MemoryState;

#[derive(Debug)]
struct Durability {
    log: EventLog,
    snapshot_dir: Option<PathBuf>,
    interval: u64,
}

#[derive(Debug)]
pub struct MemoryHandle {
    current: RwLock<Arc<MemoryState>>,
    writer: Mutex<Option<Durability>>,
}

impl MemoryHandle {
    pub fn new(state: MemoryState) -> Self {
        Self { current: RwLock::new(Arc::new(state)), writer: Mutex::new(None) }
    }

    /// Attach an event log (and optionally a snapshot directory). Commits
    /// are appended to the log before they become visible.
    pub fn with_log(state: MemoryState, log: EventLog, snapshot_dir: Option<PathBuf>, cfg: &EngineConfig) -> Self {
        Self {
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Some(Durability { log, snapshot_dir, interval: cfg.snapshot_interval })),
        }
    }

    /// The latest published state.
    pub fn snapshot(&self) -> Arc<MemoryState> {
        self.current.read().expect("memory lock poisoned").clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    /// Commit one case. Either the whole update becomes visible or none of it.
    pub fn commit(
        &self,
        input: CommitInput<'_>,
        output: &ReflectionOutput,
        hook: &mut dyn CommitHook,
    ) -> Result<Vec<(RulePatch, PatchRejection)>, CommitError> {
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let base = self.snapshot();
        let commit = commit_update(&base, input, output, hook)?;
        let version = commit.state.version;
        if let Some(d) = writer.as_mut() {
            let mark = d.log.append_case(&commit.events, version)?;
            if let Err(e) = hook.after(CommitStep::LogWritten) {
                d.log.rollback(mark)?;
                return Err(e.into());
            }
        } else {
            hook.after(CommitStep::LogWritten)?;
        }
        let state = Arc::new(commit.state);
        *self.current.write().expect("memory lock poisoned") = state.clone();
        if let Some(d) = writer.as_mut() {
            if version % d.interval == 0 {
                Self::write_snapshot(d, &state)?;
            }
        }
        Ok(commit.skipped)
    }

    /// Snapshot the current state now (used on clean shutdown).
    pub fn checkpoint(&self) -> Result<(), PersistError> {
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        if let Some(d) = writer.as_mut() {
            let state = self.snapshot();
            Self::write_snapshot(d, &state)?;
        }
        Ok(())
    }

    fn write_snapshot(d: &mut Durability, state: &MemoryState) -> Result<(), PersistError> {
        let Some(dir) = &d.snapshot_dir else { return Ok(()) };
        let name = snapshot_file_name(state.version);
        save_snapshot(state, &dir.join(&name))?;
        d.log.append_case(&[EventBody::SnapshotMark { version: state.version, file: name }], state.version)?;
        Ok(())
    }
}
