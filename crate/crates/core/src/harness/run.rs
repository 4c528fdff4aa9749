//! Stream runner: assemble, answer, grade, reflect and commit per case.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, AgentAnswer};
use super::cases::CaseRecord;
use super::report::{CaseResult, Counters, ReportConfig, RunReport};
use crate::config::EngineConfig;
use crate::context::{assemble, MemoryToggles};
use crate::error::HarnessError;
use crate::handle::MemoryHandle;
use crate::model::{grade, Feedback, InteractionTrace};
use crate::reflection::{CommitInput, NoFaults, ReflectionEngine, ReflectionInput};
use crate::state::MemoryState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub toggles: MemoryToggles,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { toggles: MemoryToggles::ALL, seed: 0 }
    }
}

/// Process `cases` in order against `memory`. Agent failures count as
/// incorrect answers; invalid case data and commit failures stop the run.
pub fn run_stream(
    cases: &[CaseRecord],
    agent: &mut dyn Agent,
    reflector: &mut ReflectionEngine,
    memory: &MemoryHandle,
    cfg: &EngineConfig,
    opts: RunOptions,
) -> Result<RunReport, HarnessError> {
    let calls_before = reflector.stats();
    let start_version = memory.version();
    let mut counters = Counters::default();
    let mut results = Vec::with_capacity(cases.len());

    for (i, case) in cases.iter().enumerate() {
        let descriptor = case.descriptor().map_err(|e| HarnessError::Data { line: i + 1, reason: e.to_string() })?;
        let snap = memory.snapshot();
        let prefix = assemble(&descriptor, &snap, cfg, opts.toggles);
        counters.assemble_calls += 1;
        let rendered = prefix.render();

        counters.agent_calls += 1;
        let (answer, agent_error) = match agent.answer(case, &prefix, &rendered) {
            Ok(a) => (a, None),
            Err(e) => {
                log::warn!("case {}: {e}; graded as incorrect", case.case_id);
                let empty = AgentAnswer { predicted: String::new(), trace: InteractionTrace::default() };
                (empty, Some(e.to_string()))
            }
        };
        let correct = agent_error.is_none() && grade(&answer.predicted, &case.answer_key);
        let feedback = Feedback { truth: case.answer_key.clone(), correct };

        let provenance = prefix.provenance();
        let active = prefix.active_rule_ids();
        let failure_modes = case.failure_modes();
        let input = ReflectionInput {
            descriptor: &descriptor,
            trace: &answer.trace,
            predicted: &answer.predicted,
            feedback: &feedback,
            active_rule_ids: &active,
            active_episode_ids: &provenance.episode_ids,
            failure_modes: &failure_modes,
            case_index: start_version + i as u64,
            memory: &snap,
        };
        let output = reflector.reflect(&input, cfg);
        let skipped = memory
            .commit(CommitInput::from(&input), &output, &mut NoFaults)
            .map_err(|source| HarnessError::Commit { case_id: case.case_id.clone(), source })?;
        counters.commits += 1;

        results.push(CaseResult {
            index: i,
            case_id: case.case_id.clone(),
            predicted: answer.predicted,
            truth: case.answer_key.clone(),
            correct,
            agent_error,
            rule_ids: provenance.rule_ids,
            episode_ids: provenance.episode_ids,
            skipped_patches: skipped.len(),
            memory_version: memory.version(),
        });
    }

    let stats = reflector.stats();
    counters.reflector_calls = stats.calls - calls_before.calls;
    counters.fallbacks = stats.fallbacks - calls_before.fallbacks;
    let config = ReportConfig {
        engine: cfg.clone(),
        memory: opts.toggles.to_string(),
        seed: opts.seed,
        backend: reflector.backend_name().to_string(),
        agent: agent.describe(),
    };
    Ok(RunReport::new(config, results, counters))
}

/// Run on a fresh in-memory state with the deterministic reflector.
pub fn run_fresh(
    cases: &[CaseRecord],
    agent: &mut dyn Agent,
    cfg: &EngineConfig,
    opts: RunOptions,
) -> Result<RunReport, HarnessError> {
    let memory = MemoryHandle::new(MemoryState::new(cfg));
    let mut reflector = ReflectionEngine::mock(cfg);
    run_stream(cases, agent, &mut reflector, &memory, cfg, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub final_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl PermutationSummary {
    pub fn from_accuracies(acc: &[f64]) -> Self {
        if acc.is_empty() {
            return Self { final_accuracies: Vec::new(), mean: 0.0, stddev: 0.0 };
        }
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self { final_accuracies: acc.to_vec(), mean, stddev: var.sqrt() }
    }
}

pub fn permutation_seed(seed: u64, p: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(p as u64 + 1)
}

/// Shuffle the stream `n_perms` times and run each order from empty memory.
/// Returns the summary and every run report in permutation order.
pub fn run_permutations<A: Agent + Clone>(
    cases: &[CaseRecord],
    agent: &A,
    make_reflector: &mut dyn FnMut() -> ReflectionEngine,
    cfg: &EngineConfig,
    opts: RunOptions,
    n_perms: usize,
) -> Result<(PermutationSummary, Vec<RunReport>), HarnessError> {
    let mut reports = Vec::with_capacity(n_perms);
    for p in 0..n_perms {
        let mut order = cases.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(permutation_seed(opts.seed, p)));
        let memory = MemoryHandle::new(MemoryState::new(cfg));
        let mut reflector = make_reflector();
        let mut agent = agent.clone();
        reports.push(run_stream(&order, &mut agent, &mut reflector, &memory, cfg, opts)?);
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.final_accuracy).collect();
    Ok((PermutationSummary::from_accuracies(&acc), reports))
}
