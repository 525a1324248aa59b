//! Instruction-following aggregates, cache-size fractions and latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prompts to aggregate")]
    EmptyInput,
    #[error("prompt {0} has no instructions")]
    EmptyPrompt(usize),
    #[error("prompt {prompt}, instruction {instruction}: strict pass without loose pass")]
    InvariantViolation { prompt: usize, instruction: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionResult {
    #[serde(rename = "strict")]
    pub strict_pass: bool,
    #[serde(rename = "loose")]
    pub loose_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResult {
    #[serde(default)]
    pub prompt_id: String,
    pub instructions: Vec<InstructionResult>,
}

/// Strict/loose accuracy at prompt and instruction level, and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfrSummary {
    pub spa: f64,
    pub sia: f64,
    pub lpa: f64,
    pub lia: f64,
    pub ifr: f64,
}

/// Instruction-level rates pool every instruction across prompts.
pub fn ifr(prompts: &[PromptResult]) -> Result<IfrSummary, MetricsError> {
    if prompts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut strict_prompts, mut loose_prompts) = (0usize, 0usize);
    let (mut strict_instr, mut loose_instr, mut total_instr) = (0usize, 0usize, 0usize);
    for (p, prompt) in prompts.iter().enumerate() {
        if prompt.instructions.is_empty() {
            return Err(MetricsError::EmptyPrompt(p));
        }
        for (i, r) in prompt.instructions.iter().enumerate() {
            if r.strict_pass && !r.loose_pass {
                return Err(MetricsError::InvariantViolation { prompt: p, instruction: i });
            }
        }
        let strict = prompt.instructions.iter().filter(|r| r.strict_pass).count();
        let loose = prompt.instructions.iter().filter(|r| r.loose_pass).count();
        let n = prompt.instructions.len();
        strict_prompts += usize::from(strict == n);
        loose_prompts += usize::from(loose == n);
        strict_instr += strict;
        loose_instr += loose;
        total_instr += n;
    }
    let np = prompts.len() as f64;
    let ni = total_instr as f64;
    let (spa, sia) = (strict_prompts as f64 / np, strict_instr as f64 / ni);
    let (lpa, lia) = (loose_prompts as f64 / np, loose_instr as f64 / ni);
    Ok(IfrSummary { spa, sia, lpa, lia, ifr: (spa + sia + lpa + lia) / 4.0 })
}

/// Parses one `PromptResult` per non-blank line.
pub fn parse_prompt_results(jsonl: &str) -> Result<Vec<PromptResult>, serde_json::Error> {
    jsonl.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Cached tokens relative to the uncompressed history.
pub fn cache_fraction(cached_len: usize, full_len: usize) -> f64 {
    if full_len == 0 {
        return 1.0;
    }
    cached_len as f64 / full_len as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub prefill_s: f64,
    pub ttft_s: f64,
    pub tpot_ms: f64,
    pub total_gen_s: f64,
    pub tokens: usize,
    pub cache_fraction: f64,
}

/// Stopwatch handed to the measured closure. Call [`mark_prefill`] once the
/// prompt is in the cache and [`mark_token`] after every generated token.
///
/// [`mark_prefill`]: TimingProbe::mark_prefill
/// [`mark_token`]: TimingProbe::mark_token
#[derive(Debug)]
pub struct TimingProbe {
    start: Instant,
    prefill: Option<f64>,
    first_token: Option<f64>,
    tokens: usize,
}

impl TimingProbe {
    fn new() -> Self {
        Self { start: Instant::now(), prefill: None, first_token: None, tokens: 0 }
    }

    pub fn mark_prefill(&mut self) {
        self.prefill = Some(self.start.elapsed().as_secs_f64());
    }

    pub fn mark_token(&mut self) {
        if self.first_token.is_none() {
            self.first_token = Some(self.start.elapsed().as_secs_f64());
        }
        self.tokens += 1;
    }
}

/// Times a run. The closure returns the cache fraction it ended with.
pub fn measure_timing<E>(run: impl FnOnce(&mut TimingProbe) -> Result<f64, E>) -> Result<TimingStats, E> {
    let mut probe = TimingProbe::new();
    let cache_fraction = run(&mut probe)?;
    let total_gen_s = probe.start.elapsed().as_secs_f64();
    let prefill_s = probe.prefill.unwrap_or(total_gen_s);
    let ttft_s = probe.first_token.unwrap_or(total_gen_s).max(prefill_s);
    let tpot_ms = if probe.tokens >= 2 { (total_gen_s - ttft_s) * 1000.0 / (probe.tokens - 1) as f64 } else { 0.0 };
    Ok(TimingStats { prefill_s, ttft_s, tpot_ms, total_gen_s, tokens: probe.tokens, cache_fraction })
}
