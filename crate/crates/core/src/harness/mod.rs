//! Benchmark harness: case streams, synthetic data, agents, the stream
//! runner and reports.

pub mod agent;
pub mod cases;
pub mod report;
pub mod run;
pub mod synth;

pub use agent::{Agent, AgentAnswer, AgentError, MockAgent, MockAgentConfig};
pub use cases::{load_case_stream, parse_case_stream, CaseRecord, Category};
pub use report::{emit_report, load_report, parse_report, render_report, ReportFormat, RunReport};
pub use run::{run_fresh, run_permutations, run_stream, PermutationSummary, RunOptions};
pub use synth::{generate_synthetic_stream, SyntheticSpec, ToolProfile};
