//! Segmented KV-cache pool.
//!
//! A [`CachePool`] is an ordered list of [`Segment`]s (system prompt, then
//! query/response pairs per turn). Every surviving token keeps its original
//! key/value vectors and its position in the uncompressed conversation
//! stream, and every segment counts how many times a compressor has been
//! applied to it.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("segment {got} cannot follow {after}")]
    OrderViolation { after: String, got: SegmentKind },
    #[error("token shape mismatch: expected {expected} values per vector, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("segment must contain at least one token")]
    EmptySegment,
    #[error("origin indices must be strictly increasing ({prev} then {next})")]
    OriginNotIncreasing { prev: usize, next: usize },
    #[error("compression keeps no tokens")]
    EmptySelection,
    #[error("segment range {start}..{end} is empty or outside a pool of {len} segments")]
    RangeNotContiguous { start: usize, end: usize, len: usize },
    #[error("keep index {index} is outside a range of {len} tokens")]
    KeepOutOfBounds { index: usize, len: usize },
    #[error("compression would leave segment {0} without tokens")]
    SegmentEmptied(SegmentKind),
    #[error("invalid segment label {0:?}")]
    BadLabel(String),
}

/// Per-token cache entry.
///
/// `keys` and `values` hold `layers * heads * head_dim` floats laid out as
/// `[layer][head][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenKv {
    pub origin_index: usize,
    pub token_id: u32,
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

impl TokenKv {
    /// Bitwise equality, so that `-0.0`/`0.0` and NaN payloads are told apart.
    pub fn bit_eq(&self, other: &TokenKv) -> bool {
        self.origin_index == other.origin_index
            && self.token_id == other.token_id
            && bits_eq(&self.keys, &other.keys)
            && bits_eq(&self.values, &other.values)
    }
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Which part of the conversation a segment holds. Turns start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    SystemPrompt,
    Query(u32),
    Response(u32),
}

impl SegmentKind {
    pub fn turn(self) -> u32 {
        match self {
            SegmentKind::SystemPrompt => 0,
            SegmentKind::Query(t) | SegmentKind::Response(t) => t,
        }
    }

    fn chronological_key(self) -> (u32, u8) {
        match self {
            SegmentKind::SystemPrompt => (0, 0),
            SegmentKind::Query(t) => (t, 0),
            SegmentKind::Response(t) => (t, 1),
        }
    }

    pub fn role(self) -> &'static str {
        match self {
            SegmentKind::SystemPrompt => "system_prompt",
            SegmentKind::Query(_) => "query",
            SegmentKind::Response(_) => "response",
        }
    }
}

impl Ord for SegmentKind {
    fn cmp(&self, other: &Self) -> Ordering {
        self.chronological_key().cmp(&other.chronological_key())
    }
}

impl PartialOrd for SegmentKind {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentKind::SystemPrompt => write!(f, "sys"),
            SegmentKind::Query(t) => write!(f, "q{t}"),
            SegmentKind::Response(t) => write!(f, "r{t}"),
        }
    }
}

impl FromStr for SegmentKind {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CacheError::BadLabel(s.to_string());
        if s == "sys" {
            return Ok(SegmentKind::SystemPrompt);
        }
        let (head, turn) = s.split_at(s.len().min(1));
        let turn: u32 = turn.parse().map_err(|_| bad())?;
        if turn == 0 {
            return Err(bad());
        }
        match head {
            "q" => Ok(SegmentKind::Query(turn)),
            "r" => Ok(SegmentKind::Response(turn)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for SegmentKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SegmentKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub tokens: Vec<TokenKv>,
    pub compression_count: u32,
    pub original_len: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn origins(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().map(|t| t.origin_index)
    }

    pub fn bit_eq(&self, other: &Segment) -> bool {
        self.kind == other.kind
            && self.compression_count == other.compression_count
            && self.original_len == other.original_len
            && self.same_tokens(other)
    }

    /// Token-level equality ignoring the compression ledger.
    pub fn same_tokens(&self, other: &Segment) -> bool {
        self.tokens.len() == other.tokens.len()
            && self.tokens.iter().zip(&other.tokens).all(|(a, b)| a.bit_eq(b))
    }
}

/// Dimensions of every key/value vector stored in a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvShape {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl KvShape {
    pub fn vector_len(&self) -> usize {
        self.layers * self.heads * self.head_dim
    }

    /// Offset of `(layer, head)` inside a token's key or value vector.
    pub fn offset(&self, layer: usize, head: usize) -> usize {
        (layer * self.heads + head) * self.head_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachePool {
    shape: KvShape,
    segments: Vec<Segment>,
}

pub type CompressionLedger = BTreeMap<SegmentKind, u32>;

impl CachePool {
    pub fn new(shape: KvShape) -> Self {
        Self { shape, segments: Vec::new() }
    }

    pub fn shape(&self) -> KvShape {
        self.shape
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Token count the pool would have had without any eviction.
    pub fn original_len(&self) -> usize {
        self.segments.iter().map(|s| s.original_len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenKv> + '_ {
        self.segments.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn last_kind(&self) -> Option<SegmentKind> {
        self.segments.last().map(|s| s.kind)
    }

    /// Kind the next appended segment has to be.
    pub fn next_kind(&self) -> SegmentKind {
        match self.last_kind() {
            None => SegmentKind::SystemPrompt,
            Some(SegmentKind::SystemPrompt) => SegmentKind::Query(1),
            Some(SegmentKind::Query(t)) => SegmentKind::Response(t),
            Some(SegmentKind::Response(t)) => SegmentKind::Query(t + 1),
        }
    }

    pub fn compression_ledger(&self) -> CompressionLedger {
        self.segments.iter().map(|s| (s.kind, s.compression_count)).collect()
    }

    /// Flattened token range `[start, end)` covered by a segment range.
    pub fn token_span(&self, range: Range<usize>) -> Range<usize> {
        let start: usize = self.segments[..range.start].iter().map(Segment::len).sum();
        let len: usize = self.segments[range].iter().map(Segment::len).sum();
        start..start + len
    }

    pub fn append_segment(&mut self, kind: SegmentKind, tokens: Vec<TokenKv>) -> Result<(), CacheError> {
        let expected = self.next_kind();
        if kind != expected {
            let after = self.last_kind().map_or_else(|| "an empty pool".to_string(), |k| k.to_string());
            return Err(CacheError::OrderViolation { after, got: kind });
        }
        if tokens.is_empty() {
            return Err(CacheError::EmptySegment);
        }
        let width = self.shape.vector_len();
        let mut prev = self.tokens().last().map(|t| t.origin_index);
        for t in &tokens {
            for got in [t.keys.len(), t.values.len()] {
                if got != width {
                    return Err(CacheError::ShapeMismatch { expected: width, got });
                }
            }
            if let Some(p) = prev {
                if t.origin_index <= p {
                    return Err(CacheError::OriginNotIncreasing { prev: p, next: t.origin_index });
                }
            }
            prev = Some(t.origin_index);
        }
        self.segments.push(Segment { kind, original_len: tokens.len(), tokens, compression_count: 0 });
        Ok(())
    }

    /// Applies one compression to the segments in `range`.
    ///
    /// `keep` indexes the tokens of the range flattened in pool order. Every
    /// segment in the range gets its count bumped, including segments whose
    /// tokens all survive. Fails without touching the pool if any segment
    /// would be emptied.
    pub fn compress_segments(&mut self, range: Range<usize>, keep: &[usize]) -> Result<(), CacheError> {
        if range.start >= range.end || range.end > self.segments.len() {
            return Err(CacheError::RangeNotContiguous {
                start: range.start,
                end: range.end,
                len: self.segments.len(),
            });
        }
        if keep.is_empty() {
            return Err(CacheError::EmptySelection);
        }
        let span_len = self.token_span(range.clone()).len();
        let mut mask = vec![false; span_len];
        for &i in keep {
            if i >= span_len {
                return Err(CacheError::KeepOutOfBounds { index: i, len: span_len });
            }
            mask[i] = true;
        }
        let mut offset = 0;
        for seg in &self.segments[range.clone()] {
            if !mask[offset..offset + seg.len()].iter().any(|&m| m) {
                return Err(CacheError::SegmentEmptied(seg.kind));
            }
            offset += seg.len();
        }
        let mut offset = 0;
        for seg in &mut self.segments[range] {
            let n = seg.len();
            let seg_mask = &mask[offset..offset + n];
            let mut i = 0;
            seg.tokens.retain(|_| {
                let kept = seg_mask[i];
                i += 1;
                kept
            });
            seg.compression_count += 1;
            offset += n;
        }
        Ok(())
    }

    /// Pools hold the same tokens in the same segments, ignoring ledgers.
    pub fn same_tokens(&self, other: &CachePool) -> bool {
        self.shape == other.shape
            && self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.kind == b.kind && a.original_len == b.original_len && a.same_tokens(b))
    }

    /// Full bitwise equality including ledgers.
    pub fn bit_eq(&self, other: &CachePool) -> bool {
        self.shape == other.shape
            && self.segments.len() == other.segments.len()
            && self.segments.iter().zip(&other.segments).all(|(a, b)| a.bit_eq(b))
    }

    pub fn snapshot(&self, full_dump: bool) -> PoolSnapshot {
        PoolSnapshot {
            layers: self.shape.layers,
            heads: self.shape.heads,
            head_dim: self.shape.head_dim,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentSnapshot {
                    kind: s.kind.role().to_string(),
                    turn: s.kind.turn(),
                    compression_count: s.compression_count,
                    original_len: s.original_len,
                    tokens: s
                        .tokens
                        .iter()
                        .map(|t| TokenSnapshot {
                            origin_index: t.origin_index,
                            token_id: t.token_id,
                            keys: full_dump.then(|| t.keys.clone()),
                            values: full_dump.then(|| t.values.clone()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// JSON view of a pool. Key/value payloads are only present in full dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub segments: Vec<SegmentSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSnapshot {
    pub kind: String,
    pub turn: u32,
    pub compression_count: u32,
    pub original_len: usize,
    pub tokens: Vec<TokenSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSnapshot {
    pub origin_index: usize,
    pub token_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f32>>,
}
