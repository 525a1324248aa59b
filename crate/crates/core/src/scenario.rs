//! Scripted conversations and per-segment survival accounting.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CachePool, SegmentKind};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario {0}: needs at least one turn")]
    NoTurns(String),
    #[error("scenario {0}: empty system prompt or query")]
    EmptyText(String),
    #[error("scenario {id}: token {token} outside vocabulary of {vocab}")]
    TokenOutOfVocab { id: String, token: u32, vocab: usize },
}

/// System prompt plus one query per turn, as raw token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub system_prompt: Vec<u32>,
    pub turns: Vec<Vec<u32>>,
}

impl Scenario {
    pub fn validate(&self, vocab: usize) -> Result<(), ScenarioError> {
        if self.turns.is_empty() {
            return Err(ScenarioError::NoTurns(self.id.clone()));
        }
        if self.system_prompt.is_empty() || self.turns.iter().any(Vec::is_empty) {
            return Err(ScenarioError::EmptyText(self.id.clone()));
        }
        let all = self.system_prompt.iter().chain(self.turns.iter().flatten());
        if let Some(&token) = all.into_iter().find(|&&t| t as usize >= vocab) {
            return Err(ScenarioError::TokenOutOfVocab { id: self.id.clone(), token, vocab });
        }
        Ok(())
    }

    /// Uncompressed token count after all turns with fixed-length responses.
    pub fn full_len(&self, response_len: usize) -> usize {
        self.system_prompt.len() + self.turns.iter().map(|q| q.len() + response_len).sum::<usize>()
    }
}

/// Seeded synthetic corpus. Lengths are inclusive ranges; token ids avoid 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioGenerator {
    pub system_len: (usize, usize),
    pub query_len: (usize, usize),
    pub turns: usize,
    pub vocab: usize,
}

impl Default for ScenarioGenerator {
    fn default() -> Self {
        Self { system_len: (64, 128), query_len: (16, 48), turns: 3, vocab: 256 }
    }
}

impl ScenarioGenerator {
    pub fn generate_one(&self, id: impl Into<String>, seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = self.vocab.max(2) as u32;
        let text = |(lo, hi): (usize, usize), rng: &mut ChaCha8Rng| -> Vec<u32> {
            let n = rng.random_range(lo.max(1)..=hi.max(lo.max(1)));
            (0..n).map(|_| rng.random_range(1..vocab)).collect()
        };
        let system_prompt = text(self.system_len, &mut rng);
        let turns = (0..self.turns.max(1)).map(|_| text(self.query_len, &mut rng)).collect();
        Scenario { id: id.into(), system_prompt, turns }
    }

    /// `count` scenarios with ids `s000`, `s001`, ...
    pub fn generate(&self, count: usize, seed: u64) -> Vec<Scenario> {
        (0..count).map(|i| self.generate_one(format!("s{i:03}"), seed.wrapping_add(i as u64))).collect()
    }
}

pub fn parse_scenarios(jsonl: &str) -> Result<Vec<Scenario>, serde_json::Error> {
    jsonl.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

pub fn scenarios_to_jsonl(scenarios: &[Scenario]) -> String {
    scenarios
        .iter()
        .map(|s| serde_json::to_string(s).expect("scenario serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSurvival {
    pub kind: SegmentKind,
    pub original_len: usize,
    pub surviving: usize,
    pub fraction: f64,
}

/// Fraction of each reference segment's origins still present in the
/// matching segment of `compressed`. Segments missing from `compressed`
/// count as fully evicted.
pub fn survival_report(reference: &CachePool, compressed: &CachePool) -> Vec<SegmentSurvival> {
    reference
        .segments()
        .iter()
        .map(|seg| {
            let survivors: HashSet<usize> = compressed
                .segments()
                .iter()
                .find(|s| s.kind == seg.kind)
                .map(|s| s.origins().collect())
                .unwrap_or_default();
            let surviving = seg.origins().filter(|o| survivors.contains(o)).count();
            SegmentSurvival {
                kind: seg.kind,
                original_len: seg.len(),
                surviving,
                fraction: if seg.is_empty() { 1.0 } else { surviving as f64 / seg.len() as f64 },
            }
        })
        .collect()
}

/// Survival against each segment's own uncompressed length.
pub fn segment_survival(pool: &CachePool) -> Vec<SegmentSurvival> {
    pool.segments()
        .iter()
        .map(|s| SegmentSurvival {
            kind: s.kind,
            original_len: s.original_len,
            surviving: s.len(),
            fraction: s.len() as f64 / s.original_len as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::GlobalBudget;
    use crate::decoder::{Model, ModelConfig};
    use crate::policy::{PolicyConfig, PolicyKind};
    use crate::strategy::{run_session, SessionConfig, Strategy};

    #[test]
    fn generator_respects_ranges_and_seed() {
        let g = ScenarioGenerator::default();
        let a = g.generate(5, 9);
        assert_eq!(a, g.generate(5, 9));
        for s in &a {
            assert!((64..=128).contains(&s.system_prompt.len()));
            assert_eq!(s.turns.len(), 3);
            assert!(s.turns.iter().all(|q| (16..=48).contains(&q.len())));
            s.validate(256).unwrap();
        }
        assert_eq!(a[2].id, "s002");
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn jsonl_round_trip() {
        let scenarios = ScenarioGenerator { turns: 2, ..Default::default() }.generate(3, 1);
        assert_eq!(parse_scenarios(&scenarios_to_jsonl(&scenarios)).unwrap(), scenarios);
    }

    #[test]
    fn validation_errors() {
        let mut s = Scenario { id: "x".into(), system_prompt: vec![1], turns: vec![] };
        assert_eq!(s.validate(10), Err(ScenarioError::NoTurns("x".into())));
        s.turns = vec![vec![]];
        assert_eq!(s.validate(10), Err(ScenarioError::EmptyText("x".into())));
        s.turns = vec![vec![12]];
        assert!(matches!(s.validate(10), Err(ScenarioError::TokenOutOfVocab { token: 12, .. })));
    }

    #[test]
    fn survival_under_full_retention_is_total() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let s = ScenarioGenerator::default().generate_one("a", 4);
        let run = |strategy| {
            let cfg = SessionConfig {
                max_response_tokens: 4,
                ..SessionConfig::new(strategy, PolicyConfig::with_kind(PolicyKind::SnapKv), GlobalBudget::full())
            };
            run_session(&model, cfg, &s.system_prompt, &s.turns).unwrap().pool
        };
        let full = run(Strategy::Full);
        let base = run(Strategy::Baseline);
        assert!(survival_report(&full, &base).iter().all(|r| r.fraction == 1.0));
    }

    #[test]
    fn survival_counts_evicted_origins() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let s = ScenarioGenerator::default().generate_one("a", 4);
        let run = |strategy| {
            let cfg = SessionConfig {
                max_response_tokens: 4,
                ..SessionConfig::new(
                    strategy,
                    PolicyConfig::with_kind(PolicyKind::Streaming),
                    GlobalBudget::from_retention(0.5).unwrap(),
                )
            };
            run_session(&model, cfg, &s.system_prompt, &s.turns).unwrap().pool
        };
        let full = run(Strategy::Full);
        let flow = run(Strategy::FlowKv);
        let report = survival_report(&full, &flow);
        let own = segment_survival(&flow);
        for (a, b) in report.iter().zip(&own) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.surviving, b.surviving);
        }
        assert!(report[0].fraction < 0.6);
    }
}
