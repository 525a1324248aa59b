//! Linear information-loss model of repeated compression.
//!
//! A compressor acts on a cache vector as `F(C) = αC + ε`. Re-compressing
//! history every turn applies `F` T times to the oldest content, leaving
//! `α^T C₀ + Σ α^i ε_{T-1-i}`; freezing compressed history applies it once,
//! leaving `αC₀ + ε₀` forever.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("turn count must be at least 1")]
    NoTurns,
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("noise scale must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayStrategy {
    Nested,
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoLossModel {
    pub alpha: f64,
    pub dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl InfoLossModel {
    pub fn new(alpha: f64, dim: usize, noise_scale: f64, seed: u64) -> Result<Self> {
        check_alpha(alpha)?;
        if dim == 0 {
            return Err(LossError::ZeroDim);
        }
        if !(noise_scale.is_finite() && noise_scale >= 0.0) {
            return Err(LossError::InvalidNoise(noise_scale));
        }
        Ok(Self { alpha, dim, noise_scale, seed })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(LossError::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Closed-form coefficients of `C₀` after `turn` turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub turn: u32,
    pub signal_coeff: f64,
    /// `error_coeffs[j]` weights the noise of the `j`-th compression.
    pub error_coeffs: Vec<f64>,
    pub strategy: DecayStrategy,
}

pub fn nested_trace(alpha: f64, turns: u32) -> Result<DecayTrace> {
    check_alpha(alpha)?;
    if turns == 0 {
        return Err(LossError::NoTurns);
    }
    let error_coeffs = (0..turns).map(|j| alpha.powi((turns - 1 - j) as i32)).collect();
    Ok(DecayTrace { turn: turns, signal_coeff: alpha.powi(turns as i32), error_coeffs, strategy: DecayStrategy::Nested })
}

pub fn isolated_trace(alpha: f64, turns: u32) -> Result<DecayTrace> {
    check_alpha(alpha)?;
    if turns == 0 {
        return Err(LossError::NoTurns);
    }
    Ok(DecayTrace { turn: turns, signal_coeff: alpha, error_coeffs: vec![1.0], strategy: DecayStrategy::Isolated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayMeasurement {
    pub final_state: Vec<f64>,
    /// `⟨final, C₀⟩ / ‖C₀‖²`.
    pub signal_coeff: f64,
    /// Norm of the part of the final state orthogonal to `C₀`.
    pub error_norm: f64,
}

/// Seeded unit-norm `C₀` and a stream of noise vectors with the `C₀`
/// component projected out, so the signal coefficient stays exact.
struct DecaySampler {
    rng: ChaCha8Rng,
    c0: Vec<f64>,
    noise_scale: f64,
}

impl DecaySampler {
    fn new(model: &InfoLossModel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        let mut c0: Vec<f64> = (0..model.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dot(&c0, &c0).sqrt();
        if norm > 0.0 {
            c0.iter_mut().for_each(|v| *v /= norm);
        } else {
            c0[0] = 1.0;
        }
        Self { rng, c0, noise_scale: model.noise_scale }
    }

    fn noise(&mut self) -> Vec<f64> {
        let mut eps: Vec<f64> = (0..self.c0.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                self.noise_scale * z
            })
            .collect();
        let along = dot(&eps, &self.c0);
        eps.iter_mut().zip(&self.c0).for_each(|(e, c)| *e -= along * c);
        eps
    }

    fn measure(&self, state: &[f64]) -> DecayMeasurement {
        let signal = dot(state, &self.c0) / dot(&self.c0, &self.c0);
        let residual: f64 = state.iter().zip(&self.c0).map(|(s, c)| (s - signal * c).powi(2)).sum();
        DecayMeasurement { final_state: state.to_vec(), signal_coeff: signal, error_norm: residual.sqrt() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn compress(state: &mut [f64], alpha: f64, eps: &[f64]) {
    state.iter_mut().zip(eps).for_each(|(s, e)| *s = alpha * *s + e);
}

/// Applies `F` once per turn (nested) or only on the first turn (isolated).
pub fn simulate_decay(model: &InfoLossModel, turns: u32, strategy: DecayStrategy) -> Result<DecayMeasurement> {
    if turns == 0 {
        return Err(LossError::NoTurns);
    }
    let mut sampler = DecaySampler::new(model);
    let mut state = sampler.c0.clone();
    let applications = match strategy {
        DecayStrategy::Nested => turns,
        DecayStrategy::Isolated => 1,
    };
    for _ in 0..applications {
        let eps = sampler.noise();
        compress(&mut state, model.alpha, &eps);
    }
    Ok(sampler.measure(&state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub turn: u32,
    pub nested_signal: f64,
    pub isolated_signal: f64,
    pub nested_error_norm: f64,
    pub isolated_error_norm: f64,
}

/// Turn-by-turn comparison on one noise stream; both strategies share the
/// first compression's noise.
pub fn decay_table(model: &InfoLossModel, max_turns: u32) -> Result<Vec<DecayRow>> {
    if max_turns == 0 {
        return Err(LossError::NoTurns);
    }
    let mut sampler = DecaySampler::new(model);
    let mut nested = sampler.c0.clone();
    let mut isolated = sampler.c0.clone();
    let mut rows = Vec::with_capacity(max_turns as usize);
    for turn in 1..=max_turns {
        let eps = sampler.noise();
        compress(&mut nested, model.alpha, &eps);
        if turn == 1 {
            compress(&mut isolated, model.alpha, &eps);
        }
        let n = sampler.measure(&nested);
        let i = sampler.measure(&isolated);
        rows.push(DecayRow {
            turn,
            nested_signal: n.signal_coeff,
            isolated_signal: i.signal_coeff,
            nested_error_norm: n.error_norm,
            isolated_error_norm: i.error_norm,
        });
    }
    Ok(rows)
}
