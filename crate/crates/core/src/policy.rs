//! Token-selection policies.
//!
//! Every policy is expressed as a *ranking*: a permutation of the candidate
//! positions ordered by keep priority. Selecting under a budget of `k` is
//! then "take the first `k` ranked positions", which makes budget
//! monotonicity and the min-keep repair in the turn drivers policy-agnostic.
//! All ties resolve to the lower candidate index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("keep budget must be at least 1")]
    BudgetTooSmall,
    #[error("keep budget {budget} exceeds {candidates} candidates")]
    BudgetExceedsCandidates { budget: usize, candidates: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("attention row {row} sums to {sum}, not 1")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("attention scores must be finite and non-negative")]
    NegativeScore,
    #[error("query covariance is not symmetric positive semi-definite")]
    NonPsdCovariance,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("policy {policy} needs {signal}, which was not provided")]
    MissingSignal { policy: &'static str, signal: &'static str },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

const ROW_SUM_TOLERANCE: f64 = 1e-6;
const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Number of tokens a single compression call keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeepBudget(usize);

impl KeepBudget {
    pub fn new(keep_count: usize, candidates: usize) -> Result<Self> {
        if keep_count == 0 {
            return Err(PolicyError::BudgetTooSmall);
        }
        if keep_count > candidates {
            return Err(PolicyError::BudgetExceedsCandidates { budget: keep_count, candidates });
        }
        Ok(Self(keep_count))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Post-softmax attention of observer tokens over the candidates, averaged
/// over layers and heads. `observer_positions` lists the candidate indices of
/// observers that lie inside the candidate range.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionObservation {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    observer_positions: Vec<usize>,
}

impl AttentionObservation {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>, observer_positions: Vec<usize>) -> Result<Self> {
        if rows == 0 || scores.len() != rows * cols {
            return Err(PolicyError::ShapeMismatch(format!(
                "{} scores for a {rows}x{cols} observation",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(PolicyError::NegativeScore);
        }
        for (row, chunk) in scores.chunks(cols).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(PolicyError::NotRowStochastic { row, sum });
            }
        }
        if let Some(&p) = observer_positions.iter().find(|&&p| p >= cols) {
            return Err(PolicyError::ShapeMismatch(format!("observer position {p} outside {cols} candidates")));
        }
        Ok(Self { rows, cols, scores, observer_positions })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scores[r * self.cols..(r + 1) * self.cols]
    }

    pub fn observer_positions(&self) -> &[usize] {
        &self.observer_positions
    }

    /// Column means over observer rows, summed in row order.
    pub fn mean_scores(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, s) in acc.iter_mut().zip(self.row(r)) {
                *a += s;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Gaussian model of upcoming queries: mean vector and covariance (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl QueryStats {
    /// Sample mean and (biased) covariance of observed query vectors.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().map(Vec::len).unwrap_or(0);
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(PolicyError::ShapeMismatch("query samples must share one non-zero dimension".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut covariance = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    covariance[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = covariance[i * d + j] / n;
                covariance[i * d + j] = v;
                covariance[j * d + i] = v;
            }
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_psd(&self) -> Result<()> {
        let d = self.dim();
        if self.covariance.len() != d * d {
            return Err(PolicyError::ShapeMismatch(format!(
                "covariance has {} entries for dimension {d}",
                self.covariance.len()
            )));
        }
        let scale = self.covariance.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (self.covariance[i * d + j] - self.covariance[j * d + i]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(PolicyError::NonPsdCovariance);
                }
            }
        }
        // Cholesky of Σ + δI; the jitter admits singular PSD matrices.
        let jitter = 1e-10 * scale;
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = self.covariance[i * d + j];
                if i == j {
                    sum += jitter;
                }
                for k in 0..j {
                    sum -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(PolicyError::NonPsdCovariance);
                    }
                    l[i * d + i] = sum.sqrt();
                } else {
                    l[i * d + j] = sum / l[j * d + j];
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Streaming,
    #[serde(rename = "snapkv")]
    SnapKv,
    #[serde(rename = "chunkkv")]
    ChunkKv,
    ExpectedAttention,
    #[serde(rename = "h2o")]
    H2o,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Streaming,
        PolicyKind::SnapKv,
        PolicyKind::ChunkKv,
        PolicyKind::ExpectedAttention,
        PolicyKind::H2o,
        PolicyKind::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Streaming => "streaming",
            PolicyKind::SnapKv => "snapkv",
            PolicyKind::ChunkKv => "chunkkv",
            PolicyKind::ExpectedAttention => "expected_attention",
            PolicyKind::H2o => "h2o",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Leading tokens always kept by the streaming policy.
    pub sink_count: usize,
    /// Trailing tokens of a range whose attention scores the rest.
    pub obs_window: usize,
    /// Width of the SnapKV max-pool; must be odd.
    pub pool_kernel: usize,
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyKind::SnapKv, sink_count: 4, obs_window: 32, pool_kernel: 5, chunk_size: 4, seed: 0 }
    }
}

/// Signals a policy reads when ranking a range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Signals {
    pub observation: bool,
    pub cumulative: bool,
    pub keys: bool,
}

/// Everything a policy may look at when ranking one candidate range.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyInput<'a> {
    pub candidates: usize,
    pub observation: Option<&'a AttentionObservation>,
    pub cumulative: Option<&'a [f64]>,
    pub keys: Option<&'a [Vec<f64>]>,
    pub query_stats: Option<&'a QueryStats>,
    /// Mixed into the random policy's seed so each compression call draws
    /// a fresh subset.
    pub salt: u64,
}

impl PolicyConfig {
    pub fn with_kind(kind: PolicyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_kernel == 0 || self.pool_kernel % 2 == 0 {
            return Err(PolicyError::InvalidConfig(format!("pool_kernel must be odd, got {}", self.pool_kernel)));
        }
        if self.obs_window == 0 {
            return Err(PolicyError::InvalidConfig("obs_window must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(PolicyError::InvalidConfig("chunk_size must be positive".into()));
        }
        Ok(())
    }

    pub fn signals(&self) -> Signals {
        match self.kind {
            PolicyKind::Streaming | PolicyKind::Random => Signals::default(),
            PolicyKind::SnapKv | PolicyKind::ChunkKv => Signals { observation: true, ..Signals::default() },
            PolicyKind::H2o => Signals { cumulative: true, ..Signals::default() },
            PolicyKind::ExpectedAttention => Signals { keys: true, ..Signals::default() },
        }
    }

    /// Ranks all candidates by keep priority.
    pub fn rank(&self, input: &PolicyInput<'_>) -> Result<Vec<usize>> {
        let n = input.candidates;
        let missing = |signal| PolicyError::MissingSignal { policy: self.kind.label(), signal };
        match self.kind {
            PolicyKind::Streaming => Ok(rank_streaming(n, self.sink_count)),
            PolicyKind::Random => Ok(rank_random(n, rng::derive_seed(self.seed, input.salt))),
            PolicyKind::SnapKv => {
                let obs = input.observation.ok_or_else(|| missing("an attention observation"))?;
                check_cols(obs, n)?;
                Ok(rank_snapkv(obs, self.pool_kernel))
            }
            PolicyKind::ChunkKv => {
                let obs = input.observation.ok_or_else(|| missing("an attention observation"))?;
                check_cols(obs, n)?;
                Ok(rank_chunkkv(obs, self.chunk_size))
            }
            PolicyKind::H2o => {
                let cumulative = input.cumulative.ok_or_else(|| missing("cumulative attention"))?;
                if cumulative.len() != n {
                    return Err(PolicyError::ShapeMismatch(format!(
                        "{} cumulative scores for {n} candidates",
                        cumulative.len()
                    )));
                }
                Ok(rank_by_score(cumulative))
            }
            PolicyKind::ExpectedAttention => {
                let keys = input.keys.ok_or_else(|| missing("candidate keys"))?;
                let stats = input.query_stats.ok_or_else(|| missing("query statistics"))?;
                if keys.len() != n {
                    return Err(PolicyError::ShapeMismatch(format!("{} keys for {n} candidates", keys.len())));
                }
                rank_expected_attention(keys, stats)
            }
        }
    }

    pub fn select(&self, input: &PolicyInput<'_>, budget: KeepBudget) -> Result<Vec<usize>> {
        KeepBudget::new(budget.get(), input.candidates)?;
        Ok(take_top(&self.rank(input)?, budget.get(), &[]))
    }
}

fn check_cols(obs: &AttentionObservation, n: usize) -> Result<()> {
    if obs.cols() != n {
        return Err(PolicyError::ShapeMismatch(format!("observation spans {} candidates, expected {n}", obs.cols())));
    }
    Ok(())
}

/// `must_keep` plus the best-ranked remaining positions, `k` in total,
/// sorted ascending. `must_keep` wins if it alone exceeds `k`.
pub fn take_top(ranking: &[usize], k: usize, must_keep: &[usize]) -> Vec<usize> {
    let n = ranking.len();
    let mut chosen = vec![false; n];
    let mut count = 0;
    for &i in must_keep {
        if !chosen[i] {
            chosen[i] = true;
            count += 1;
        }
    }
    for &i in ranking {
        if count >= k {
            break;
        }
        if !chosen[i] {
            chosen[i] = true;
            count += 1;
        }
    }
    (0..n).filter(|&i| chosen[i]).collect()
}

/// Indices by descending score; equal scores keep ascending index order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn rank_streaming(len: usize, sink_count: usize) -> Vec<usize> {
    let sinks = sink_count.min(len);
    (0..sinks).chain((sinks..len).rev()).collect()
}

fn rank_random(len: usize, seed: u64) -> Vec<usize> {
    let keys: Vec<u64> = (0..len as u64).map(|j| rng::counter_u64(seed, j)).collect();
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by_key(|&j| keys[j]);
    idx
}

/// Same-length 1-D max-pool with the window clamped at both edges.
pub fn max_pool(scores: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let n = scores.len();
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(n);
            scores[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn rank_snapkv(obs: &AttentionObservation, kernel: usize) -> Vec<usize> {
    let pooled = max_pool(&obs.mean_scores(), kernel);
    let mut forced: Vec<usize> = obs.observer_positions().to_vec();
    forced.sort_unstable();
    forced.dedup();
    let mut is_forced = vec![false; obs.cols()];
    forced.iter().for_each(|&p| is_forced[p] = true);
    // Most recent observers first so a tight budget keeps the tail.
    forced.iter().rev().copied().chain(rank_by_score(&pooled).into_iter().filter(|&j| !is_forced[j])).collect()
}

fn rank_chunkkv(obs: &AttentionObservation, chunk_size: usize) -> Vec<usize> {
    let token_scores = obs.mean_scores();
    let chunks: Vec<(usize, usize)> =
        (0..token_scores.len()).step_by(chunk_size).map(|s| (s, (s + chunk_size).min(token_scores.len()))).collect();
    let chunk_scores: Vec<f64> =
        chunks.iter().map(|&(s, e)| token_scores[s..e].iter().sum::<f64>() / (e - s) as f64).collect();
    rank_by_score(&chunk_scores)
        .into_iter()
        .flat_map(|c| {
            let (s, e) = chunks[c];
            rank_by_score(&token_scores[s..e]).into_iter().map(move |j| s + j)
        })
        .collect()
}

/// Log of the expected exponentiated attention logit of each key under a
/// Gaussian query: `μ·k/√d + kᵀΣk/(2d)`.
pub fn expected_attention_scores(keys: &[Vec<f64>], stats: &QueryStats) -> Result<Vec<f64>> {
    stats.check_psd()?;
    let d = stats.dim();
    let sqrt_d = (d as f64).sqrt();
    keys.iter()
        .map(|k| {
            if k.len() != d {
                return Err(PolicyError::ShapeMismatch(format!("key of dim {} vs query dim {d}", k.len())));
            }
            let linear: f64 = stats.mean.iter().zip(k).map(|(m, x)| m * x).sum::<f64>() / sqrt_d;
            let quad: f64 = stats
                .covariance
                .chunks(d)
                .zip(k)
                .map(|(row, ki)| ki * row.iter().zip(k).map(|(s, kj)| s * kj).sum::<f64>())
                .sum();
            Ok(linear + quad / (2.0 * d as f64))
        })
        .collect()
}

fn rank_expected_attention(keys: &[Vec<f64>], stats: &QueryStats) -> Result<Vec<usize>> {
    Ok(rank_by_score(&expected_attention_scores(keys, stats)?))
}

/// First `min(sink_count, k)` positions plus the most recent remainder.
pub fn select_streaming(candidates: usize, budget: KeepBudget, cfg: &PolicyConfig) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), candidates)?;
    Ok(take_top(&rank_streaming(candidates, cfg.sink_count), budget.get(), &[]))
}

pub fn select_snapkv(obs: &AttentionObservation, budget: KeepBudget, cfg: &PolicyConfig) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), obs.cols())?;
    Ok(take_top(&rank_snapkv(obs, cfg.pool_kernel), budget.get(), &[]))
}

pub fn select_chunkkv(obs: &AttentionObservation, budget: KeepBudget, cfg: &PolicyConfig) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), obs.cols())?;
    Ok(take_top(&rank_chunkkv(obs, cfg.chunk_size), budget.get(), &[]))
}

pub fn select_expected_attention(keys: &[Vec<f64>], stats: &QueryStats, budget: KeepBudget) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), keys.len())?;
    Ok(take_top(&rank_expected_attention(keys, stats)?, budget.get(), &[]))
}

pub fn select_h2o(cumulative: &[f64], budget: KeepBudget) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), cumulative.len())?;
    Ok(take_top(&rank_by_score(cumulative), budget.get(), &[]))
}

/// Uniform subset without replacement, fixed by `cfg.seed`.
pub fn select_random(candidates: usize, budget: KeepBudget, cfg: &PolicyConfig) -> Result<Vec<usize>> {
    KeepBudget::new(budget.get(), candidates)?;
    Ok(take_top(&rank_random(candidates, cfg.seed), budget.get(), &[]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(k: usize, n: usize) -> KeepBudget {
        KeepBudget::new(k, n).unwrap()
    }

    fn uniform_obs(rows: usize, cols: usize) -> AttentionObservation {
        AttentionObservation::new(rows, cols, vec![1.0 / cols as f64; rows * cols], vec![]).unwrap()
    }

    /// Rows each put all mass on one candidate.
    fn peaked_obs(cols: usize, peaks: &[usize]) -> AttentionObservation {
        let mut scores = vec![0.0; peaks.len() * cols];
        for (r, &p) in peaks.iter().enumerate() {
            scores[r * cols + p] = 1.0;
        }
        AttentionObservation::new(peaks.len(), cols, scores, vec![]).unwrap()
    }

    #[test]
    fn streaming_sink_plus_window() {
        let cfg = PolicyConfig { sink_count: 2, ..PolicyConfig::with_kind(PolicyKind::Streaming) };
        assert_eq!(select_streaming(10, budget(4, 10), &cfg).unwrap(), vec![0, 1, 8, 9]);
        assert_eq!(select_streaming(10, budget(10, 10), &cfg).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(select_streaming(10, budget(1, 10), &cfg).unwrap(), vec![0]);
    }

    #[test]
    fn budget_bounds() {
        assert_eq!(KeepBudget::new(0, 3), Err(PolicyError::BudgetTooSmall));
        assert!(matches!(KeepBudget::new(4, 3), Err(PolicyError::BudgetExceedsCandidates { .. })));
    }

    #[test]
    fn snapkv_uniform_ties_break_low() {
        let cfg = PolicyConfig { pool_kernel: 1, ..PolicyConfig::default() };
        assert_eq!(select_snapkv(&uniform_obs(2, 8), budget(3, 8), &cfg).unwrap(), vec![0, 1, 2]);
        let cfg5 = PolicyConfig::default();
        assert_eq!(select_snapkv(&uniform_obs(2, 8), budget(3, 8), &cfg5).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn snapkv_picks_concentrated_columns() {
        let cfg = PolicyConfig { pool_kernel: 1, ..PolicyConfig::default() };
        let mut scores = vec![0.02; 16];
        // Row 0: 0.5 on candidate 3, 0.38 on 6; row 1: 0.3 on 3, 0.58 on 6.
        scores[3] = 0.5;
        scores[6] = 0.38;
        scores[8 + 3] = 0.3;
        scores[8 + 6] = 0.58;
        let obs = AttentionObservation::new(2, 8, scores, vec![]).unwrap();
        assert_eq!(select_snapkv(&obs, budget(2, 8), &cfg).unwrap(), vec![3, 6]);
        assert_eq!(select_snapkv(&obs, budget(8, 8), &cfg).unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn snapkv_pooling_spreads_to_neighbours() {
        let obs = peaked_obs(9, &[4]);
        let cfg = PolicyConfig { pool_kernel: 3, ..PolicyConfig::default() };
        assert_eq!(select_snapkv(&obs, budget(3, 9), &cfg).unwrap(), vec![3, 4, 5]);
        assert_eq!(max_pool(&[1.0, 0.0, 0.0, 2.0], 3), vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn snapkv_forces_observer_window() {
        let mut scores = vec![0.0; 8];
        scores[0] = 1.0;
        let obs = AttentionObservation::new(1, 8, scores, vec![7]).unwrap();
        let cfg = PolicyConfig { pool_kernel: 1, ..PolicyConfig::default() };
        assert_eq!(select_snapkv(&obs, budget(2, 8), &cfg).unwrap(), vec![0, 7]);
        assert_eq!(select_snapkv(&obs, budget(1, 8), &cfg).unwrap(), vec![7]);
    }

    #[test]
    fn chunkkv_keeps_best_chunk() {
        let cfg = PolicyConfig { chunk_size: 4, ..PolicyConfig::with_kind(PolicyKind::ChunkKv) };
        let obs = peaked_obs(8, &[5]);
        assert_eq!(select_chunkkv(&obs, budget(4, 8), &cfg).unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(select_chunkkv(&obs, budget(8, 8), &cfg).unwrap(), (0..8).collect::<Vec<_>>());
        // Budget 5: whole best chunk, then the top token of the other.
        assert_eq!(select_chunkkv(&obs, budget(5, 8), &cfg).unwrap(), vec![0, 4, 5, 6, 7]);
    }

    #[test]
    fn chunkkv_short_tail_chunk() {
        let cfg = PolicyConfig { chunk_size: 4, ..PolicyConfig::with_kind(PolicyKind::ChunkKv) };
        // Tail chunk {8, 9} has the highest mean.
        let obs = peaked_obs(10, &[9]);
        assert_eq!(select_chunkkv(&obs, budget(3, 10), &cfg).unwrap(), vec![0, 8, 9]);
    }

    #[test]
    fn chunk_size_one_matches_snapkv_kernel_one() {
        let obs = peaked_obs(6, &[2, 5, 2]);
        let chunk = PolicyConfig { chunk_size: 1, ..PolicyConfig::default() };
        let snap = PolicyConfig { pool_kernel: 1, ..PolicyConfig::default() };
        for k in 1..=6 {
            assert_eq!(select_chunkkv(&obs, budget(k, 6), &chunk), select_snapkv(&obs, budget(k, 6), &snap));
        }
    }

    #[test]
    fn observation_validation() {
        assert!(matches!(
            AttentionObservation::new(1, 2, vec![0.5, 0.4], vec![]),
            Err(PolicyError::NotRowStochastic { .. })
        ));
        assert_eq!(AttentionObservation::new(1, 2, vec![1.5, -0.5], vec![]), Err(PolicyError::NegativeScore));
        assert!(matches!(AttentionObservation::new(1, 2, vec![1.0], vec![]), Err(PolicyError::ShapeMismatch(_))));
        assert!(AttentionObservation::new(1, 2, vec![0.5, 0.5 + 5e-7], vec![]).is_ok());
    }

    #[test]
    fn expected_attention_dot_product_when_no_covariance() {
        let keys = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let stats = QueryStats { mean: vec![0.0, 3.0], covariance: vec![0.0; 4] };
        assert_eq!(select_expected_attention(&keys, &stats, budget(1, 3)).unwrap(), vec![1]);
    }

    #[test]
    fn expected_attention_identity_covariance_ranks_by_norm() {
        let keys = vec![vec![1.0, 0.0], vec![2.0, 2.0], vec![0.0, -1.5]];
        let stats = QueryStats { mean: vec![0.0, 0.0], covariance: vec![1.0, 0.0, 0.0, 1.0] };
        let ranked = rank_expected_attention(&keys, &stats).unwrap();
        assert_eq!(ranked, vec![1, 2, 0]);
    }

    #[test]
    fn expected_attention_rejects_non_psd() {
        let keys = vec![vec![1.0, 0.0]];
        let asym = QueryStats { mean: vec![0.0; 2], covariance: vec![1.0, 0.5, 0.0, 1.0] };
        assert_eq!(select_expected_attention(&keys, &asym, budget(1, 1)), Err(PolicyError::NonPsdCovariance));
        let indefinite = QueryStats { mean: vec![0.0; 2], covariance: vec![1.0, 0.0, 0.0, -0.5] };
        assert_eq!(
            select_expected_attention(&keys, &indefinite, budget(1, 1)),
            Err(PolicyError::NonPsdCovariance)
        );
    }

    #[test]
    fn sample_covariance_is_symmetric() {
        let stats = QueryStats::from_samples(&[vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(stats.mean, vec![2.0, 1.0]);
        assert!((stats.covariance[1] - stats.covariance[2]).abs() == 0.0);
        assert!((stats.covariance[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(stats.check_psd().is_ok());
    }

    #[test]
    fn h2o_sorts_cumulative() {
        assert_eq!(select_h2o(&[3.0, 1.0, 2.0], budget(2, 3)).unwrap(), vec![0, 2]);
        assert_eq!(select_h2o(&[1.0; 4], budget(2, 4)).unwrap(), vec![0, 1]);
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let cfg = PolicyConfig { seed: 1, ..PolicyConfig::with_kind(PolicyKind::Random) };
        assert_eq!(select_random(7, budget(7, 7), &cfg).unwrap(), (0..7).collect::<Vec<_>>());
        let a = select_random(100, budget(50, 100), &cfg).unwrap();
        assert_eq!(a, select_random(100, budget(50, 100), &cfg).unwrap());
        assert_eq!(a.len(), 50);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn missing_signal_is_reported() {
        let cfg = PolicyConfig::default();
        let input = PolicyInput { candidates: 3, ..PolicyInput::default() };
        assert!(matches!(cfg.rank(&input), Err(PolicyError::MissingSignal { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::default().validate().is_ok());
        assert!(PolicyConfig { pool_kernel: 4, ..PolicyConfig::default() }.validate().is_err());
        assert!(PolicyConfig { chunk_size: 0, ..PolicyConfig::default() }.validate().is_err());
        let parsed: PolicyConfig = serde_json::from_str(r#"{"kind":"chunkkv","chunk_size":8}"#).unwrap();
        assert_eq!(parsed.kind, PolicyKind::ChunkKv);
        assert_eq!(parsed.chunk_size, 8);
        assert_eq!(parsed.sink_count, 4);
    }

    #[test]
    fn take_top_respects_must_keep() {
        let ranking = [3, 2, 1, 0];
        assert_eq!(take_top(&ranking, 2, &[0]), vec![0, 3]);
        assert_eq!(take_top(&ranking, 1, &[0, 1]), vec![0, 1]);
    }
}
