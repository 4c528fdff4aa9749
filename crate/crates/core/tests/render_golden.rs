use std::path::PathBuf;

use casemem::config::EngineConfig;
use casemem::context::{assemble, MemoryToggles};
use casemem::governance::ToolOutcome;
use casemem::model::{normalize_descriptor, Episode, InteractionTrace, OutcomeKind};
use casemem::procedural::RulePatch;
use casemem::state::MemoryState;

fn memory(cfg: &EngineConfig) -> MemoryState {
    let mut m = MemoryState::new(cfg);
    for (i, (q, tags, correct)) in [
        ("Is there a left pleural effusion?", vec!["effusion", "left"], false),
        ("Is the heart enlarged?", vec!["cardiomegaly"], true),
        ("Is there a small left effusion?", vec!["effusion"], true),
    ]
    .into_iter()
    .enumerate()
    {
        let id = format!("case-{i}");
        m.episodic
            .add_episode(Episode {
                episode_id: id.clone(),
                descriptor: normalize_descriptor(&id, q, tags, "cxr", None).unwrap(),
                trace: InteractionTrace::default(),
                predicted: if correct { "B".into() } else { "A".into() },
                truth: "B".into(),
                summary: format!("summary {i}"),
                guideline: format!("guideline {i}"),
                correct,
                case_index: i as u64,
            })
            .unwrap();
    }
    m.procedural.apply_patch(&RulePatch::add("Check costophrenic angles for effusion", 0), 0).unwrap();
    m.procedural.apply_patch(&RulePatch::add("Compare heart width with chest width", 2), 1).unwrap();
    for (tool, kind, n) in [("classifier", OutcomeKind::Helpful, 7), ("segmenter", OutcomeKind::Harmful, 3)] {
        for _ in 0..n {
            m.governance.record_tool_outcome(&ToolOutcome::new(tool, kind));
        }
    }
    m.version = 3;
    m
}

#[test]
fn prefix_matches_golden_file() {
    let cfg = EngineConfig::default();
    let q = normalize_descriptor("q", "Is there a left effusion?", ["effusion", "left"], "cxr", None).unwrap();
    let text = assemble(&q, &memory(&cfg), &cfg, MemoryToggles::ALL).render();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_prefix.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(&path).unwrap());
}
