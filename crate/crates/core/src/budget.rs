//! Global-budget bookkeeping shared by the eviction strategies.
//!
//! At every compression instant the pool must shrink to
//! `round(s_full * retention)` tokens, where `s_full` is the uncompressed
//! size of the whole history. The isolation strategy only touches fresh
//! segments, so it must fit them into whatever that target leaves after the
//! already-frozen segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("retention must lie in (0, 1], got {0}")]
    InvalidRetention(f64),
    #[error("compression ratio must lie in [0, 1), got {0}")]
    InvalidRatio(f64),
}

/// Fraction of the full cache that survives compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalBudget {
    retention: f64,
}

impl GlobalBudget {
    pub fn from_retention(retention: f64) -> Result<Self, BudgetError> {
        if !(retention > 0.0 && retention <= 1.0) {
            return Err(BudgetError::InvalidRetention(retention));
        }
        Ok(Self { retention })
    }

    /// A compression ratio `r` removes that fraction, keeping `1 - r`.
    /// With `invert` the value is taken as the retained fraction itself.
    pub fn from_ratio(ratio: f64, invert: bool) -> Result<Self, BudgetError> {
        if invert {
            return Self::from_retention(ratio);
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(BudgetError::InvalidRatio(ratio));
        }
        Self::from_retention(1.0 - ratio)
    }

    pub fn full() -> Self {
        Self { retention: 1.0 }
    }

    pub fn retention(self) -> f64 {
        self.retention
    }
}

/// `round_half_up(s_full * retention)`, never below 1 for a non-empty history.
///
/// The product is nudged by 1e-9 before flooring so that decimal halves
/// (e.g. `5 * 0.7`) round up despite binary representation error.
pub fn target_budget(s_full: usize, g: GlobalBudget) -> usize {
    if s_full == 0 {
        return 0;
    }
    let raw = (s_full as f64 * g.retention + 0.5 + 1e-9).floor() as usize;
    raw.clamp(1, s_full)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetState {
    /// Uncompressed size of all history eligible at this compression instant.
    pub s_full: usize,
    /// Tokens already compressed and frozen.
    pub s_preserved: usize,
    pub turn: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetDecision {
    pub target: usize,
    pub keep: usize,
    /// The min-keep floor overrode the target: the global ratio cannot be
    /// met this turn.
    pub clamped: bool,
}

/// Tokens the fresh range may keep: `target - s_preserved`, floored at
/// `min_keep` and capped at the range's current size `available`.
pub fn new_data_budget(state: BudgetState, g: GlobalBudget, min_keep: usize, available: usize) -> BudgetDecision {
    let target = target_budget(state.s_full, g);
    let raw = target as isize - state.s_preserved as isize;
    let clamped = raw < min_keep as isize;
    let keep = if clamped { min_keep } else { raw as usize };
    BudgetDecision { target, keep: keep.min(available), clamped }
}

/// Fraction of the fresh range that survives this turn's compression.
pub fn local_retention(b_new: usize, s_new_full: usize) -> f64 {
    b_new as f64 / s_new_full as f64
}
