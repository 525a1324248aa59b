//! Sweep configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use flowkv_core::budget::GlobalBudget;
use flowkv_core::scenario::{parse_scenarios, Scenario, ScenarioGenerator};
use flowkv_core::{ModelConfig, PolicyConfig, Strategy};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Fractions of the cache removed; `invert_ratio` reads them as kept fractions instead.
    pub ratios: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub policy: PolicyConfig,
    pub model: ModelConfig,
    pub max_response_tokens: usize,
    pub eos_token: Option<u32>,
    /// Each seed picks the model weights and the policy's random stream.
    pub seeds: Vec<u64>,
    pub invert_ratio: bool,
    pub output_dir: PathBuf,
    /// JSONL scenario file. Relative paths resolve against the config file.
    pub scenarios: Option<PathBuf>,
    /// Used when `scenarios` is absent.
    pub generator: ScenarioGenerator,
    pub scenario_count: usize,
    pub scenario_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            strategies: Strategy::ALL.to_vec(),
            policy: PolicyConfig::default(),
            model: ModelConfig::default(),
            max_response_tokens: 16,
            eos_token: None,
            seeds: vec![1, 2, 3],
            invert_ratio: false,
            output_dir: PathBuf::from("out"),
            scenarios: None,
            generator: ScenarioGenerator::default(),
            scenario_count: 4,
            scenario_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(s), Some(dir)) = (&cfg.scenarios, path.parent()) {
            if s.is_relative() {
                cfg.scenarios = Some(dir.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.ratios.is_empty() {
            return bad("ratios is empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        for &r in &self.ratios {
            self.budget(r)?;
        }
        if self.max_response_tokens == 0 {
            return bad("max_response_tokens must be positive".into());
        }
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.policy.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.scenarios.is_none() && self.scenario_count == 0 {
            return bad("scenario_count is zero and no scenario file given".into());
        }
        Ok(())
    }

    pub fn budget(&self, ratio: f64) -> Result<GlobalBudget, HarnessError> {
        GlobalBudget::from_ratio(ratio, self.invert_ratio).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn model_for_seed(&self, seed: u64) -> ModelConfig {
        ModelConfig { seed, ..self.model.clone() }
    }

    pub fn policy_for_seed(&self, seed: u64) -> PolicyConfig {
        PolicyConfig { seed, ..self.policy.clone() }
    }

    /// Loads the scenario file or generates the synthetic corpus.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, HarnessError> {
        let scenarios = match &self.scenarios {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                parse_scenarios(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
            }
            None => ScenarioGenerator { vocab: self.model.vocab, ..self.generator.clone() }
                .generate(self.scenario_count, self.scenario_seed),
        };
        if scenarios.is_empty() {
            return Err(HarnessError::Config("no scenarios".into()));
        }
        Ok(scenarios)
    }

    /// Checks a scenario fits the model's vocabulary and context length.
    pub fn check_scenario(&self, s: &Scenario) -> Result<(), HarnessError> {
        s.validate(self.model.vocab).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        let need = s.full_len(self.max_response_tokens);
        if need > self.model.max_seq {
            return Err(HarnessError::Scenario(format!(
                "scenario {} needs {need} positions but model.max_seq is {}",
                s.id, self.model.max_seq
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SweepConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_lists_rejected() {
        for text in [r#"{"strategies": []}"#, r#"{"ratios": []}"#, r#"{"seeds": []}"#] {
            assert!(matches!(SweepConfig::from_json(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn ratio_range_depends_on_inversion() {
        assert!(SweepConfig::from_json(r#"{"ratios": [1.0]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"ratios": [1.0], "invert_ratio": true}"#).is_ok());
        assert!(SweepConfig::from_json(r#"{"ratios": [0.0], "invert_ratio": true}"#).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(SweepConfig::from_json(r#"{"ratio": [0.5]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"policy": {"kind": "snapkv", "window": 3}}"#).is_err());
    }

    #[test]
    fn oversized_scenarios_rejected() {
        let cfg = SweepConfig { model: ModelConfig { max_seq: 64, ..ModelConfig::default() }, ..Default::default() };
        let s = &cfg.scenarios().unwrap()[0];
        assert!(matches!(cfg.check_scenario(s), Err(HarnessError::Scenario(m)) if m.contains("max_seq")));
    }
}
