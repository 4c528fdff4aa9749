//! Seeded synthetic case streams with recurring failure modes.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cases::{CaseRecord, Category};
use crate::error::HarnessError;

pub const CHOICES: [&str; 4] = ["A", "B", "C", "D"];

const NOISE_TAGS: [&str; 12] = [
    "opacity", "cardiomegaly", "atelectasis", "nodule", "consolidation", "edema", "hilar", "fracture", "device",
    "emphysema", "mass", "pneumothorax",
];

/// Annotation probabilities for one tool; the remainder is "no annotation".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolProfile {
    pub helpful: f64,
    pub harmful: f64,
    pub misuse: f64,
}

impl ToolProfile {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.helpful, self.harmful, self.misuse];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("tool probabilities must lie in [0, 1]".into());
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err("tool probabilities must sum to at most 1".into());
        }
        Ok(())
    }
}

pub fn default_tool_profiles() -> BTreeMap<String, ToolProfile> {
    BTreeMap::from([
        ("classifier".to_string(), ToolProfile { helpful: 0.8, harmful: 0.0, misuse: 0.1 }),
        ("segmenter".to_string(), ToolProfile { helpful: 0.4, harmful: 0.4, misuse: 0.2 }),
        ("vqa".to_string(), ToolProfile { helpful: 0.6, harmful: 0.1, misuse: 0.1 }),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub n_failure_modes: usize,
    /// Probability that a case beyond the guaranteed ones carries a
    /// recurring failure mode (otherwise it is untagged).
    pub recurrence_rate: f64,
    #[serde(default = "default_tool_profiles")]
    pub tool_profiles: BTreeMap<String, ToolProfile>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_cases: usize, n_failure_modes: usize, recurrence_rate: f64, seed: u64) -> Self {
        Self { n_cases, n_failure_modes, recurrence_rate, tool_profiles: default_tool_profiles(), seed }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.n_cases == 0 {
            return bad("n_cases must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.recurrence_rate) {
            return bad(format!("recurrence_rate {} not in [0, 1]", self.recurrence_rate));
        }
        if self.n_failure_modes > self.n_cases {
            return bad("more failure modes than cases".into());
        }
        if self.recurrence_rate > 0.0 && self.n_cases < 2 * self.n_failure_modes {
            return bad("recurring modes need at least two cases each".into());
        }
        for (name, p) in &self.tool_profiles {
            p.validate().map_err(|e| HarnessError::InvalidSpec(format!("tool {name}: {e}")))?;
        }
        Ok(())
    }
}

pub fn mode_name(i: usize, n_modes: usize) -> String {
    let width = n_modes.max(1).to_string().len();
    format!("mode_{i:0width$}")
}

/// Generate the stream. Every mode appears at least once, and at least
/// twice when `recurrence_rate > 0`; remaining cases pick a random mode with
/// probability `recurrence_rate` and are untagged otherwise. Each mode has a
/// fixed correct option.
pub fn generate_synthetic_stream(spec: &SyntheticSpec) -> Result<Vec<CaseRecord>, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let modes: Vec<String> = (0..spec.n_failure_modes).map(|i| mode_name(i, spec.n_failure_modes)).collect();
    let answers: Vec<&str> = modes.iter().map(|_| *CHOICES.choose(&mut rng).expect("non-empty")).collect();

    let mut slots: Vec<Option<usize>> = (0..modes.len()).map(Some).collect();
    if spec.recurrence_rate > 0.0 {
        slots.extend((0..modes.len()).map(Some));
    }
    while slots.len() < spec.n_cases {
        if !modes.is_empty() && rng.random::<f64>() < spec.recurrence_rate {
            slots.push(Some(rng.random_range(0..modes.len())));
        } else {
            slots.push(None);
        }
    }
    slots.shuffle(&mut rng);

    let width = spec.n_cases.to_string().len();
    let cases = slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            let noise = *NOISE_TAGS.choose(&mut rng).expect("non-empty");
            let case_id = format!("syn-{i:0width$}");
            match slot {
                Some(m) => CaseRecord {
                    question_text: format!("Which diagnosis best explains the {} pattern?", modes[m]),
                    case_id,
                    choices: Some(CHOICES.iter().map(|c| c.to_string()).collect()),
                    answer_key: answers[m].to_string(),
                    finding_tags: vec![modes[m].clone(), noise.to_string()],
                    failure_mode_tags: vec![modes[m].clone()],
                    category: Category::Synthetic,
                },
                None => {
                    let second = *NOISE_TAGS.choose(&mut rng).expect("non-empty");
                    CaseRecord {
                        question_text: "Which diagnosis best explains the findings?".to_string(),
                        case_id,
                        choices: Some(CHOICES.iter().map(|c| c.to_string()).collect()),
                        answer_key: CHOICES.choose(&mut rng).expect("non-empty").to_string(),
                        finding_tags: vec![noise.to_string(), second.to_string()],
                        failure_mode_tags: Vec::new(),
                        category: Category::Synthetic,
                    }
                }
            }
        })
        .collect();
    Ok(cases)
}
