//! Self-evolving case memory for a radiology QA agent: episodic cases,
//! procedural rules and tool governance, assembled into a bounded context
//! prefix and updated after every graded case.

pub mod config;
pub mod context;
pub mod episodic;
pub mod error;
pub mod governance;
pub mod handle;
pub mod harness;
pub mod model;
pub mod persistence;
pub mod procedural;
pub mod reflection;
pub mod state;
pub mod text;

pub use config::EngineConfig;
pub use context::{assemble, ContextPrefix, MemoryToggles};
pub use handle::MemoryHandle;
pub use state::MemoryState;
