//! Long-prompt size and latency table: FullKV against ChunkKV with and
//! without segment freezing.

use flowkv_core::metrics::{cache_fraction, measure_timing, TimingProbe};
use flowkv_core::policy::PolicyKind;
use flowkv_core::strategy::TurnObserver;
use flowkv_core::{GlobalBudget, Model, ModelConfig, PolicyConfig, Session, SessionConfig, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub prompt_len: usize,
    pub query_len: usize,
    pub output_len: usize,
    pub turns: usize,
    pub ratio: f64,
    pub invert_ratio: bool,
    pub policy: PolicyConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            prompt_len: 8192,
            query_len: 16,
            output_len: 64,
            turns: 1,
            ratio: 0.9,
            invert_ratio: false,
            policy: PolicyConfig::with_kind(PolicyKind::ChunkKv),
            model: ModelConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub cache_fraction: f64,
    pub cache_len: usize,
    pub prefill_s: f64,
    pub ttft_s: f64,
    pub tpot_ms: f64,
    pub total_s: f64,
    pub tokens: usize,
}

struct TokenMarks<'a>(&'a mut TimingProbe);

impl TurnObserver for TokenMarks<'_> {
    fn on_token(&mut self, _index: usize) {
        self.0.mark_token();
    }
}

fn method_label(strategy: Strategy, policy: PolicyKind) -> String {
    let name = match policy {
        PolicyKind::Streaming => "StreamingLLM",
        PolicyKind::SnapKv => "SnapKV",
        PolicyKind::ChunkKv => "ChunkKV",
        PolicyKind::ExpectedAttention => "ExpectedAttention",
        PolicyKind::H2o => "H2O",
        PolicyKind::Random => "Random",
    };
    match strategy {
        Strategy::Full => "FullKV".into(),
        Strategy::Baseline => name.into(),
        Strategy::FlowKv => format!("{name}+FlowKV"),
    }
}

/// One row per strategy. Prefill time covers the prompt only; time to first
/// token also covers compression and the query.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, HarnessError> {
    if cfg.prompt_len == 0 || cfg.query_len == 0 || cfg.output_len == 0 || cfg.turns == 0 {
        return Err(HarnessError::Config("bench lengths and turns must be positive".into()));
    }
    let budget = GlobalBudget::from_ratio(cfg.ratio, cfg.invert_ratio).map_err(|e| HarnessError::Config(e.to_string()))?;
    let needed = cfg.prompt_len + cfg.turns * (cfg.query_len + cfg.output_len);
    let model_cfg = ModelConfig { seed: cfg.seed, max_seq: cfg.model.max_seq.max(needed), ..cfg.model.clone() };
    let model = Model::new(model_cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = cfg.model.vocab as u32;
    let mut text = |n: usize| -> Vec<u32> { (0..n).map(|_| rng.random_range(1..vocab)).collect() };
    let prompt = text(cfg.prompt_len);
    let queries: Vec<Vec<u32>> = (0..cfg.turns).map(|_| text(cfg.query_len)).collect();
    let policy = PolicyConfig { seed: cfg.seed, ..cfg.policy.clone() };

    Strategy::ALL
        .iter()
        .map(|&strategy| {
            let session_cfg = SessionConfig {
                max_response_tokens: cfg.output_len,
                ..SessionConfig::new(strategy, policy.clone(), budget)
            };
            let mut cache_len = 0;
            let stats = measure_timing(|probe| {
                let mut session = Session::new(&model, session_cfg, &prompt)?;
                probe.mark_prefill();
                let mut fraction = 1.0;
                for q in &queries {
                    let out = session.run_turn_observed(q, &mut TokenMarks(probe))?;
                    fraction = cache_fraction(out.record.post_compress_len, out.record.s_full);
                    cache_len = out.record.post_compress_len;
                }
                Ok::<_, flowkv_core::strategy::SessionError>(fraction)
            })
            .map_err(|source| HarnessError::Session { cell: format!("bench {}", strategy.label()), source })?;
            Ok(BenchRow {
                method: method_label(strategy, policy.kind),
                cache_fraction: stats.cache_fraction,
                cache_len,
                prefill_s: stats.prefill_s,
                ttft_s: stats.ttft_s,
                tpot_ms: stats.tpot_ms,
                total_s: stats.total_gen_s,
                tokens: stats.tokens,
            })
        })
        .collect()
}
