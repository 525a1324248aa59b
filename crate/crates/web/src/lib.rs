//! Browser bindings. Every export returns a JSON string that `www/index.html`
//! draws on a canvas.

use flowkv_core::loss::{decay_table, nested_trace, DecayRow, InfoLossModel};
use flowkv_core::scenario::{segment_survival, ScenarioGenerator, SegmentSurvival};
use flowkv_core::{GlobalBudget, Model, ModelConfig, PolicyConfig, PolicyKind, Session, SessionConfig, Strategy};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct DecayCurves {
    pub alpha: f64,
    pub rows: Vec<DecayRow>,
    /// `alpha^t` for each row, for overlaying on the measured curve.
    pub closed_form: Vec<f64>,
}

pub fn decay_curves(alpha: f64, max_turns: u32, noise: f64, seed: u64) -> Result<DecayCurves, String> {
    let model = InfoLossModel::new(alpha, 32, noise, seed).map_err(|e| e.to_string())?;
    let rows = decay_table(&model, max_turns).map_err(|e| e.to_string())?;
    let closed_form = (1..=max_turns)
        .map(|t| nested_trace(alpha, t).map(|tr| tr.signal_coeff))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(DecayCurves { alpha, rows, closed_form })
}

#[derive(Debug, Serialize)]
pub struct StrategyTrace {
    pub strategy: Strategy,
    /// Pool size right after each turn's compression.
    pub post_len: Vec<usize>,
    pub target: Vec<usize>,
    pub survival: Vec<SegmentSurvival>,
}

#[derive(Debug, Serialize)]
pub struct SessionComparison {
    pub policy: PolicyKind,
    pub ratio: f64,
    pub full_len: Vec<usize>,
    pub strategies: Vec<StrategyTrace>,
}

fn parse_policy(policy: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(policy).ok_or_else(|| format!("unknown policy {policy:?}"))
}

const RESPONSE_LEN: usize = 12;

/// Runs baseline and FlowKV over one synthetic conversation.
pub fn compare_sessions(policy: &str, ratio: f64, turns: usize, seed: u64) -> Result<SessionComparison, String> {
    let kind = parse_policy(policy)?;
    let budget = GlobalBudget::from_ratio(ratio, false).map_err(|e| e.to_string())?;
    let scenario = ScenarioGenerator { turns: turns.clamp(1, 8), ..ScenarioGenerator::default() }.generate_one("demo", seed);
    let model = Model::new(ModelConfig { seed, max_seq: 1024, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
    let mut full_len = Vec::new();
    let mut strategies = Vec::new();
    for strategy in [Strategy::Baseline, Strategy::FlowKv] {
        let cfg = SessionConfig {
            max_response_tokens: RESPONSE_LEN,
            ..SessionConfig::new(strategy, PolicyConfig { seed, ..PolicyConfig::with_kind(kind) }, budget)
        };
        let mut session = Session::new(&model, cfg, &scenario.system_prompt).map_err(|e| e.to_string())?;
        let mut trace = StrategyTrace { strategy, post_len: vec![], target: vec![], survival: vec![] };
        full_len.clear();
        for q in &scenario.turns {
            let out = session.run_turn(q).map_err(|e| e.to_string())?;
            full_len.push(out.record.s_full);
            trace.post_len.push(out.record.post_compress_len);
            trace.target.push(out.record.target);
        }
        trace.survival = segment_survival(session.pool());
        strategies.push(trace);
    }
    Ok(SessionComparison { policy: kind, ratio, full_len, strategies })
}

#[derive(Debug, Serialize)]
pub struct PolicyMask {
    pub policy: PolicyKind,
    /// One flag per system-prompt position.
    pub kept: Vec<bool>,
}

/// Which system-prompt positions each policy keeps at the first compression.
pub fn policy_masks(ratio: f64, prompt_len: usize, seed: u64) -> Result<Vec<PolicyMask>, String> {
    let budget = GlobalBudget::from_ratio(ratio, false).map_err(|e| e.to_string())?;
    let len = prompt_len.clamp(8, 480);
    let generator = ScenarioGenerator { system_len: (len, len), query_len: (8, 8), turns: 1, ..Default::default() };
    let scenario = generator.generate_one("masks", seed);
    let model = Model::new(ModelConfig { seed, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
    PolicyKind::ALL
        .iter()
        .map(|&kind| {
            let cfg = SessionConfig {
                max_response_tokens: 1,
                ..SessionConfig::new(Strategy::FlowKv, PolicyConfig { seed, ..PolicyConfig::with_kind(kind) }, budget)
            };
            let mut session = Session::new(&model, cfg, &scenario.system_prompt).map_err(|e| e.to_string())?;
            session.run_turn(&scenario.turns[0]).map_err(|e| e.to_string())?;
            let mut kept = vec![false; len];
            session.pool().segments()[0].origins().for_each(|o| kept[o] = true);
            Ok(PolicyMask { policy: kind, kept })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = decayCurves)]
pub fn decay_curves_js(alpha: f64, max_turns: u32, noise: f64, seed: u32) -> Result<String, JsError> {
    to_js(decay_curves(alpha, max_turns, noise, u64::from(seed)))
}

#[wasm_bindgen(js_name = compareSessions)]
pub fn compare_sessions_js(policy: &str, ratio: f64, turns: u32, seed: u32) -> Result<String, JsError> {
    to_js(compare_sessions(policy, ratio, turns as usize, u64::from(seed)))
}

#[wasm_bindgen(js_name = policyMasks)]
pub fn policy_masks_js(ratio: f64, prompt_len: u32, seed: u32) -> Result<String, JsError> {
    to_js(policy_masks(ratio, prompt_len as usize, u64::from(seed)))
}
