//! KV-cache management for multi-turn dialogue.
//!
//! The pool ([`cache`]) stores per-token keys and values in conversation
//! segments. Turn drivers ([`strategy`]) compress it with a pluggable
//! token-selection policy ([`policy`]) under a global size target
//! ([`budget`]), either re-compressing all history every turn or freezing
//! what has already been compressed. A seeded toy transformer ([`decoder`])
//! supplies real keys, values and attention, and [`loss`] holds the
//! analytic model of signal decay under repeated compression.

pub mod budget;
pub mod cache;
pub mod decoder;
pub mod loss;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod strategy;

pub use budget::{target_budget, GlobalBudget};
pub use cache::{CachePool, KvShape, Segment, SegmentKind, TokenKv};
pub use decoder::{Model, ModelConfig};
pub use policy::{PolicyConfig, PolicyKind};
pub use scenario::{Scenario, ScenarioGenerator};
pub use strategy::{run_session, Session, SessionConfig, SessionRun, Strategy, TurnRecord};
