//! Seeded toy decoder-only transformer.
//!
//! Pre-norm blocks (RMSNorm without gain, multi-head causal attention with
//! rotary positions, SiLU feed-forward) over a tiny vocabulary. Rotary
//! phases come from each token's `origin_index`, so evicting history never
//! shifts the positions of surviving tokens.
//!
//! Weights live in one flat buffer filled from the counter-based stream in
//! [`crate::rng`]: parameter `i` (in the order embed, per-layer
//! wq/wk/wv/wo/w1/w2, lm_head) is `(2 * counter_unit(seed, i) - 1) * 0.1`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CachePool, KvShape, TokenKv};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum DecoderError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence position {position} exceeds max_seq {max_seq}")]
    SeqOverflow { position: usize, max_seq: usize },
    #[error("token id {token} outside vocabulary of {vocab}")]
    InvalidToken { token: u32, vocab: usize },
    #[error("context vectors have length {got}, model expects {expected}")]
    ContextShape { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, DecoderError>;

const WEIGHT_SCALE: f32 = 0.1;
const ROPE_BASE: f64 = 10_000.0;
const NORM_EPS: f32 = 1e-6;
pub const WEIGHT_MAGIC: &[u8; 4] = b"TDKV";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Residual width; must equal `heads * head_dim`.
    pub d_model: usize,
    pub ffn_mult: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { vocab: 256, layers: 2, heads: 2, head_dim: 8, d_model: 16, ffn_mult: 4, max_seq: 512, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab", self.vocab),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("d_model", self.d_model),
            ("ffn_mult", self.ffn_mult),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(DecoderError::Config(format!("{name} must be positive")));
        }
        if self.heads * self.head_dim != self.d_model {
            return Err(DecoderError::Config(format!(
                "heads ({}) x head_dim ({}) != d_model ({})",
                self.heads, self.head_dim, self.d_model
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(DecoderError::Config("head_dim must be even for rotary positions".into()));
        }
        Ok(())
    }

    pub fn kv_shape(&self) -> KvShape {
        KvShape { layers: self.layers, heads: self.heads, head_dim: self.head_dim }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w1: usize,
    w2: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: Vec<f32>,
    layers: Vec<LayerOffsets>,
    lm_head: usize,
    rope_freqs: Vec<f64>,
}

/// Result of running new tokens through the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub kvs: Vec<TokenKv>,
    /// Per new token: query vector averaged over layers, heads concatenated.
    pub queries: Vec<Vec<f64>>,
    /// Origins of every context position visible to the last new token.
    pub context_origins: Vec<usize>,
    /// Captured attention rows (averaged over layers and heads) for the
    /// last few new tokens. Row `r` covers context positions
    /// `0..=position_of_its_token`.
    pub rows: Vec<AttentionRow>,
    /// Attention mass each context position received from all new tokens.
    pub column_mass: Vec<f64>,
    /// Logits after the last new token.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub observer_origin: usize,
    pub weights: Vec<f64>,
}

/// Tokens produced by greedy decoding together with their cache entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub kvs: Vec<TokenKv>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ffn = cfg.ffn_mult * d;
        let mut next = cfg.vocab * d;
        let layers = (0..cfg.layers)
            .map(|_| {
                let mut take = |n: usize| {
                    let at = next;
                    next += n;
                    at
                };
                LayerOffsets {
                    wq: take(d * d),
                    wk: take(d * d),
                    wv: take(d * d),
                    wo: take(d * d),
                    w1: take(ffn * d),
                    w2: take(d * ffn),
                }
            })
            .collect();
        let lm_head = next;
        let total = lm_head + cfg.vocab * d;
        let params = (0..total as u64)
            .map(|i| ((2.0 * rng::counter_unit(cfg.seed, i) - 1.0) as f32) * WEIGHT_SCALE)
            .collect();
        let rope_freqs =
            (0..cfg.head_dim / 2).map(|i| ROPE_BASE.powf(-(2.0 * i as f64) / cfg.head_dim as f64)).collect();
        Ok(Self { cfg, params, layers, lm_head, rope_freqs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn kv_shape(&self) -> KvShape {
        self.cfg.kv_shape()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    /// Order-sensitive hash over the bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |h, w| rng::mix64(h ^ u64::from(w.to_bits())))
    }

    /// Flat little-endian dump: `"TDKV"`, version `u32`, param count `u64`,
    /// then every weight as `f32`.
    pub fn write_weights<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(WEIGHT_MAGIC)?;
        out.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for w in &self.params {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    fn matvec(&self, offset: usize, rows: usize, cols: usize, x: &[f32], out: &mut [f32]) {
        let w = &self.params[offset..offset + rows * cols];
        for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn rope(&self, v: &mut [f32], position: usize) {
        let hd = self.cfg.head_dim;
        for head in v.chunks_exact_mut(hd) {
            for (i, freq) in self.rope_freqs.iter().enumerate() {
                let (sin, cos) = (position as f64 * freq).sin_cos();
                let (a, b) = (head[2 * i] as f64, head[2 * i + 1] as f64);
                head[2 * i] = (a * cos - b * sin) as f32;
                head[2 * i + 1] = (a * sin + b * cos) as f32;
            }
        }
    }

    /// Runs `tokens` causally after `context`, assigning them origins
    /// `first_origin..`. Attention rows are kept for the last
    /// `capture_rows` new tokens.
    pub fn forward(
        &self,
        context: &[&TokenKv],
        tokens: &[u32],
        first_origin: usize,
        capture_rows: usize,
    ) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let shape = self.kv_shape();
        let width = shape.vector_len();
        if let Some(t) = context.iter().find(|t| t.keys.len() != width || t.values.len() != width) {
            return Err(DecoderError::ContextShape { expected: width, got: t.keys.len().min(t.values.len()) });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= cfg.vocab) {
            return Err(DecoderError::InvalidToken { token, vocab: cfg.vocab });
        }
        if first_origin + tokens.len() > cfg.max_seq {
            return Err(DecoderError::SeqOverflow { position: first_origin + tokens.len(), max_seq: cfg.max_seq });
        }

        let d = cfg.d_model;
        let hd = cfg.head_dim;
        let ffn = cfg.ffn_mult * d;
        let avg = 1.0 / (cfg.layers * cfg.heads) as f64;
        let scale = 1.0 / (hd as f64).sqrt();
        let ctx_len = context.len();
        let total = ctx_len + tokens.len();
        let capture_from = tokens.len().saturating_sub(capture_rows);

        let mut kvs: Vec<TokenKv> = Vec::with_capacity(tokens.len());
        let mut queries = Vec::with_capacity(tokens.len());
        let mut rows = Vec::new();
        let mut column_mass = vec![0.0f64; total];
        let mut logits = vec![0.0f32; cfg.vocab];

        let (mut x, mut q, mut k, mut v) = (vec![0.0f32; d], vec![0.0f32; d], vec![0.0f32; d], vec![0.0f32; d]);
        let mut attn = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        let mut hidden = vec![0.0f32; ffn];
        let mut probs = vec![0.0f64; total];
        let mut row = vec![0.0f64; total];

        for (i, &token) in tokens.iter().enumerate() {
            let origin = first_origin + i;
            let visible = ctx_len + i + 1;
            let mut h: Vec<f32> = self.params[token as usize * d..(token as usize + 1) * d].to_vec();
            let mut cur = TokenKv { origin_index: origin, token_id: token, keys: vec![0.0; width], values: vec![0.0; width] };
            let mut q_avg = vec![0.0f64; d];
            row[..visible].iter_mut().for_each(|r| *r = 0.0);

            for (l, off) in self.layers.iter().enumerate() {
                rms_norm(&h, &mut x);
                self.matvec(off.wq, d, d, &x, &mut q);
                self.matvec(off.wk, d, d, &x, &mut k);
                self.matvec(off.wv, d, d, &x, &mut v);
                self.rope(&mut q, origin);
                self.rope(&mut k, origin);
                let base = shape.offset(l, 0);
                cur.keys[base..base + d].copy_from_slice(&k);
                cur.values[base..base + d].copy_from_slice(&v);
                q_avg.iter_mut().zip(&q).for_each(|(a, b)| *a += f64::from(*b) / cfg.layers as f64);

                for head in 0..cfg.heads {
                    let o = shape.offset(l, head);
                    let qh = &q[head * hd..(head + 1) * hd];
                    let keys_at = |j: usize| -> &[f32] {
                        let t = if j < ctx_len {
                            context[j]
                        } else if j < ctx_len + i {
                            &kvs[j - ctx_len]
                        } else {
                            &cur
                        };
                        &t.keys[o..o + hd]
                    };
                    let mut max = f64::NEG_INFINITY;
                    for (j, p) in probs[..visible].iter_mut().enumerate() {
                        let dot: f32 = qh.iter().zip(keys_at(j)).map(|(a, b)| a * b).sum();
                        *p = f64::from(dot) * scale;
                        max = max.max(*p);
                    }
                    let mut sum = 0.0;
                    for p in &mut probs[..visible] {
                        *p = (*p - max).exp();
                        sum += *p;
                    }
                    let out = &mut attn[head * hd..(head + 1) * hd];
                    out.iter_mut().for_each(|a| *a = 0.0);
                    for (j, p) in probs[..visible].iter_mut().enumerate() {
                        *p /= sum;
                        row[j] += *p * avg;
                        let t = if j < ctx_len {
                            context[j]
                        } else if j < ctx_len + i {
                            &kvs[j - ctx_len]
                        } else {
                            &cur
                        };
                        let pv = *p as f32;
                        out.iter_mut().zip(&t.values[o..o + hd]).for_each(|(a, b)| *a += pv * b);
                    }
                }
                self.matvec(off.wo, d, d, &attn, &mut proj);
                h.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);

                rms_norm(&h, &mut x);
                self.matvec(off.w1, ffn, d, &x, &mut hidden);
                hidden.iter_mut().for_each(|z| *z = silu(*z));
                self.matvec(off.w2, d, ffn, &hidden, &mut proj);
                h.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);
            }

            column_mass[..visible].iter_mut().zip(&row[..visible]).for_each(|(c, r)| *c += r);
            if i >= capture_from {
                rows.push(AttentionRow { observer_origin: origin, weights: row[..visible].to_vec() });
            }
            if i + 1 == tokens.len() {
                rms_norm(&h, &mut x);
                self.matvec(self.lm_head, cfg.vocab, d, &x, &mut logits);
            }
            queries.push(q_avg);
            kvs.push(cur);
        }

        let context_origins =
            context.iter().map(|t| t.origin_index).chain(first_origin..first_origin + tokens.len()).collect();
        Ok(ForwardOutput { kvs, queries, context_origins, rows, column_mass, logits })
    }

    /// Prefill of `tokens` after everything already in `pool`.
    pub fn prefill(&self, pool: &CachePool, tokens: &[u32], first_origin: usize, capture_rows: usize) -> Result<ForwardOutput> {
        let context: Vec<&TokenKv> = pool.tokens().collect();
        self.forward(&context, tokens, first_origin, capture_rows)
    }

    /// Greedy decoding after `pool` (whose last prefill produced `logits`).
    ///
    /// Each chosen token is fed back so its cache entry exists; an
    /// end-of-sequence token, when hit, is the last element of the output.
    /// `observe` sees every single-token step.
    pub fn generate_with(
        &self,
        pool: &CachePool,
        logits: &[f32],
        first_origin: usize,
        max_tokens: usize,
        eos: Option<u32>,
        capture_rows: usize,
        mut observe: impl FnMut(&ForwardOutput),
    ) -> Result<Generation> {
        let context: Vec<&TokenKv> = pool.tokens().collect();
        let mut generated: Vec<TokenKv> = Vec::with_capacity(max_tokens);
        let mut tokens = Vec::with_capacity(max_tokens);
        let mut logits = logits.to_vec();
        for step in 0..max_tokens {
            let next = argmax(&logits);
            tokens.push(next);
            let out = {
                let mut ctx = Vec::with_capacity(context.len() + generated.len());
                ctx.extend_from_slice(&context);
                ctx.extend(generated.iter());
                self.forward(&ctx, &[next], first_origin + step, capture_rows)?
            };
            observe(&out);
            logits = out.logits;
            generated.extend(out.kvs);
            if eos == Some(next) {
                break;
            }
        }
        Ok(Generation { tokens, kvs: generated })
    }

    pub fn generate(
        &self,
        pool: &CachePool,
        logits: &[f32],
        first_origin: usize,
        max_tokens: usize,
        eos: Option<u32>,
    ) -> Result<Generation> {
        self.generate_with(pool, logits, first_origin, max_tokens, eos, 0, |_| {})
    }
}

fn rms_norm(h: &[f32], out: &mut [f32]) {
    let ms = h.iter().map(|v| v * v).sum::<f32>() / h.len() as f32;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    out.iter_mut().zip(h).for_each(|(o, v)| *o = v * inv);
}

fn silu(z: f32) -> f32 {
    z / (1.0 + (-z).exp())
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}
