//! Turn drivers.
//!
//! A [`Session`] owns one conversation's cache pool. Each turn it
//! optionally compresses history, prefills the new query, greedily decodes a
//! response and appends both as fresh segments:
//!
//! * `Full` never compresses.
//! * `Baseline` compresses the whole pool as one range every turn, so older
//!   segments are compressed again and again.
//! * `FlowKv` compresses only segments that have never been compressed and
//!   leaves everything else frozen, sizing the fresh range so the pool ends
//!   at the same global target as `Baseline`.

use std::collections::{HashMap, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{self, BudgetDecision, BudgetState, GlobalBudget};
use crate::cache::{CacheError, CachePool, CompressionLedger, SegmentKind};
use crate::decoder::{DecoderError, ForwardOutput, Model};
use crate::policy::{take_top, AttentionObservation, PolicyConfig, PolicyError, PolicyInput, QueryStats};

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("invalid session config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Full,
    Baseline,
    #[serde(rename = "flowkv")]
    FlowKv,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Full, Strategy::Baseline, Strategy::FlowKv];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Baseline => "baseline",
            Strategy::FlowKv => "flowkv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub strategy: Strategy,
    pub policy: PolicyConfig,
    pub budget: GlobalBudget,
    pub max_response_tokens: usize,
    /// Stop decoding at this token. `None` gives fixed-length responses.
    pub eos_token: Option<u32>,
}

impl SessionConfig {
    pub fn new(strategy: Strategy, policy: PolicyConfig, budget: GlobalBudget) -> Self {
        Self { strategy, policy, budget, max_response_tokens: 32, eos_token: None }
    }
}

/// What one turn did to the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub strategy: Strategy,
    pub s_full: usize,
    pub s_preserved: usize,
    pub target: usize,
    pub pre_compress_len: usize,
    pub post_compress_len: usize,
    /// Size of the range handed to the policy before compression.
    pub range_len: usize,
    pub local_keep_count: usize,
    pub local_retention: f64,
    pub clamped: bool,
    pub query_len: usize,
    pub response_len: usize,
    pub ledger: CompressionLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub record: TurnRecord,
    pub response: Vec<u32>,
}

/// Hooks fired during a turn, used for latency measurement.
pub trait TurnObserver {
    fn on_compressed(&mut self) {}
    fn on_prefilled(&mut self) {}
    fn on_token(&mut self, _index: usize) {}
}

impl TurnObserver for () {}

/// Recent attention rows and queries plus lifetime attention mass per
/// origin, keyed by origin index so eviction never misaligns them.
#[derive(Debug, Clone, Default)]
struct AttentionTracker {
    window: usize,
    rows: VecDeque<(usize, Vec<(usize, f64)>)>,
    queries: VecDeque<Vec<f64>>,
    cumulative: Vec<f64>,
}

impl AttentionTracker {
    fn new(window: usize) -> Self {
        Self { window, ..Self::default() }
    }

    fn absorb(&mut self, out: &ForwardOutput) {
        let origins = &out.context_origins;
        if let Some(&max) = origins.last() {
            if self.cumulative.len() <= max {
                self.cumulative.resize(max + 1, 0.0);
            }
        }
        for (pos, mass) in out.column_mass.iter().enumerate() {
            self.cumulative[origins[pos]] += mass;
        }
        for row in &out.rows {
            let weights = row.weights.iter().enumerate().map(|(p, &w)| (origins[p], w)).collect();
            self.rows.push_back((row.observer_origin, weights));
            if self.rows.len() > self.window {
                self.rows.pop_front();
            }
        }
        for q in &out.queries {
            self.queries.push_back(q.clone());
            if self.queries.len() > self.window {
                self.queries.pop_front();
            }
        }
    }

    /// Observer rows restricted to `candidates` (sorted origins) and
    /// renormalized; observers are the last `window` candidates.
    fn observation(&self, candidates: &[usize]) -> Result<AttentionObservation> {
        let n = candidates.len();
        let first_observer = n.saturating_sub(self.window);
        let by_observer: HashMap<usize, &Vec<(usize, f64)>> = self.rows.iter().map(|(o, w)| (*o, w)).collect();
        let mut scores = Vec::new();
        let mut observer_positions = Vec::new();
        for (pos, origin) in candidates.iter().enumerate().skip(first_observer) {
            let Some(weights) = by_observer.get(origin) else { continue };
            let mut row = vec![0.0; n];
            let mut c = 0;
            for &(o, w) in weights.iter() {
                while c < n && candidates[c] < o {
                    c += 1;
                }
                if c < n && candidates[c] == o {
                    row[c] = w;
                }
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                continue;
            }
            row.iter_mut().for_each(|v| *v /= sum);
            scores.extend(row);
            observer_positions.push(pos);
        }
        if observer_positions.is_empty() {
            return Err(PolicyError::MissingSignal { policy: "attention", signal: "observer rows for the range" }.into());
        }
        Ok(AttentionObservation::new(observer_positions.len(), n, scores, observer_positions)?)
    }
}

/// `must_keep` grows by each empty segment's best-ranked token until every
/// segment in the range keeps at least one token.
fn select_with_floor(ranking: &[usize], keep: usize, segments: &[Range<usize>]) -> Vec<usize> {
    let mut must_keep: Vec<usize> = Vec::new();
    loop {
        let selected = take_top(ranking, keep, &must_keep);
        let mut kept = vec![false; ranking.len()];
        selected.iter().for_each(|&i| kept[i] = true);
        let empty: Vec<&Range<usize>> = segments.iter().filter(|r| !kept[(*r).clone()].iter().any(|&k| k)).collect();
        if empty.is_empty() {
            return selected;
        }
        for r in empty {
            if let Some(&best) = ranking.iter().find(|&&i| r.contains(&i)) {
                must_keep.push(best);
            }
        }
    }
}

pub struct Session<'m> {
    model: &'m Model,
    cfg: SessionConfig,
    pool: CachePool,
    tracker: AttentionTracker,
    next_origin: usize,
    turn: u32,
}

impl<'m> Session<'m> {
    /// Prefills the system prompt into an empty pool.
    pub fn new(model: &'m Model, cfg: SessionConfig, system_prompt: &[u32]) -> Result<Self> {
        cfg.policy.validate()?;
        if cfg.max_response_tokens == 0 {
            return Err(SessionError::Config("max_response_tokens must be at least 1".into()));
        }
        if system_prompt.is_empty() {
            return Err(SessionError::Config("system prompt is empty".into()));
        }
        let mut session = Self {
            model,
            tracker: AttentionTracker::new(cfg.policy.obs_window),
            cfg,
            pool: CachePool::new(model.kv_shape()),
            next_origin: 0,
            turn: 0,
        };
        session.prefill(SegmentKind::SystemPrompt, system_prompt)?;
        Ok(session)
    }

    pub fn pool(&self) -> &CachePool {
        &self.pool
    }

    pub fn into_pool(self) -> CachePool {
        self.pool
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    /// Origin the next processed token receives.
    pub fn next_origin(&self) -> usize {
        self.next_origin
    }

    fn prefill(&mut self, kind: SegmentKind, tokens: &[u32]) -> Result<Vec<f32>> {
        let out = self.model.prefill(&self.pool, tokens, self.next_origin, self.cfg.policy.obs_window)?;
        self.tracker.absorb(&out);
        self.pool.append_segment(kind, out.kvs)?;
        self.next_origin += tokens.len();
        Ok(out.logits)
    }

    /// Segment range the strategy compresses this turn.
    fn compression_range(&self) -> Option<Range<usize>> {
        let n = self.pool.segments().len();
        match self.cfg.strategy {
            Strategy::Full => None,
            Strategy::Baseline => Some(0..n),
            Strategy::FlowKv => {
                let start = self.pool.segments().iter().position(|s| s.compression_count == 0).unwrap_or(n);
                (start < n).then_some(start..n)
            }
        }
    }

    pub fn budget_state(&self) -> BudgetState {
        let s_preserved = match self.compression_range() {
            Some(r) => self.pool.segments()[..r.start].iter().map(|s| s.len()).sum(),
            None => 0,
        };
        BudgetState { s_full: self.pool.original_len(), s_preserved, turn: self.turn }
    }

    fn policy_ranking(&self, span: Range<usize>) -> Result<Vec<usize>> {
        let tokens: Vec<_> = self.pool.tokens().skip(span.start).take(span.len()).collect();
        let origins: Vec<usize> = tokens.iter().map(|t| t.origin_index).collect();
        let signals = self.cfg.policy.signals();
        let observation = signals.observation.then(|| self.tracker.observation(&origins)).transpose()?;
        let cumulative: Option<Vec<f64>> = signals
            .cumulative
            .then(|| origins.iter().map(|&o| self.tracker.cumulative.get(o).copied().unwrap_or(0.0)).collect());
        let (keys, stats) = if signals.keys {
            let shape = self.pool.shape();
            let d = shape.heads * shape.head_dim;
            let keys: Vec<Vec<f64>> = tokens
                .iter()
                .map(|t| {
                    let mut k = vec![0.0; d];
                    for layer in t.keys.chunks_exact(d) {
                        k.iter_mut().zip(layer).for_each(|(a, b)| *a += f64::from(*b) / shape.layers as f64);
                    }
                    k
                })
                .collect();
            let samples: Vec<Vec<f64>> = self.tracker.queries.iter().cloned().collect();
            (Some(keys), Some(QueryStats::from_samples(&samples)?))
        } else {
            (None, None)
        };
        let input = PolicyInput {
            candidates: span.len(),
            observation: observation.as_ref(),
            cumulative: cumulative.as_deref(),
            keys: keys.as_deref(),
            query_stats: stats.as_ref(),
            salt: u64::from(self.turn),
        };
        Ok(self.cfg.policy.rank(&input)?)
    }

    fn compress(&mut self) -> Result<(BudgetState, BudgetDecision, usize)> {
        let state = self.budget_state();
        let Some(range) = self.compression_range() else {
            let len = self.pool.total_len();
            return Ok((state, BudgetDecision { target: state.s_full, keep: len, clamped: false }, len));
        };
        let span = self.pool.token_span(range.clone());
        let decision = budget::new_data_budget(state, self.cfg.budget, range.len(), span.len());
        let mut seg_ranges = Vec::with_capacity(range.len());
        let mut at = 0;
        for seg in &self.pool.segments()[range.clone()] {
            seg_ranges.push(at..at + seg.len());
            at += seg.len();
        }
        let keep = if decision.keep == span.len() {
            (0..span.len()).collect()
        } else {
            select_with_floor(&self.policy_ranking(span.clone())?, decision.keep, &seg_ranges)
        };
        self.pool.compress_segments(range, &keep)?;
        Ok((state, decision, span.len()))
    }

    pub fn run_turn(&mut self, query: &[u32]) -> Result<TurnOutcome> {
        self.run_turn_observed(query, &mut ())
    }

    pub fn run_turn_observed(&mut self, query: &[u32], observer: &mut impl TurnObserver) -> Result<TurnOutcome> {
        if query.is_empty() {
            return Err(SessionError::Config("query is empty".into()));
        }
        self.turn += 1;
        let pre_compress_len = self.pool.total_len();
        let (state, decision, range_len) = self.compress()?;
        let post_compress_len = self.pool.total_len();
        observer.on_compressed();

        let logits = self.prefill(SegmentKind::Query(self.turn), query)?;
        observer.on_prefilled();

        let tracker = &mut self.tracker;
        let mut step = 0;
        let generation = self.model.generate_with(
            &self.pool,
            &logits,
            self.next_origin,
            self.cfg.max_response_tokens,
            self.cfg.eos_token,
            self.cfg.policy.obs_window,
            |out| {
                tracker.absorb(out);
                observer.on_token(step);
                step += 1;
            },
        )?;
        self.next_origin += generation.tokens.len();
        self.pool.append_segment(SegmentKind::Response(self.turn), generation.kvs)?;

        let record = TurnRecord {
            turn: self.turn,
            strategy: self.cfg.strategy,
            s_full: state.s_full,
            s_preserved: state.s_preserved,
            target: decision.target,
            pre_compress_len,
            post_compress_len,
            range_len,
            local_keep_count: decision.keep,
            local_retention: if range_len == 0 { 1.0 } else { budget::local_retention(decision.keep, range_len) },
            clamped: decision.clamped,
            query_len: query.len(),
            response_len: generation.tokens.len(),
            ledger: self.pool.compression_ledger(),
        };
        Ok(TurnOutcome { record, response: generation.tokens })
    }
}

/// Every turn of one scripted conversation.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub records: Vec<TurnRecord>,
    pub responses: Vec<Vec<u32>>,
    pub pool: CachePool,
}

pub fn run_session(model: &Model, cfg: SessionConfig, system_prompt: &[u32], turns: &[Vec<u32>]) -> Result<SessionRun> {
    let mut session = Session::new(model, cfg, system_prompt)?;
    let mut records = Vec::with_capacity(turns.len());
    let mut responses = Vec::with_capacity(turns.len());
    for query in turns {
        let outcome = session.run_turn(query)?;
        records.push(outcome.record);
        responses.push(outcome.response);
    }
    Ok(SessionRun { records, responses, pool: session.into_pool() })
}
