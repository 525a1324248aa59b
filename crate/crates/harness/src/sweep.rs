//! Per-cell session runs, the sweep driver and its CSV tables.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use flowkv_core::cache::{CachePool, CompressionLedger};
use flowkv_core::metrics::{cache_fraction, measure_timing, TimingProbe, TimingStats};
use flowkv_core::policy::PolicyKind;
use flowkv_core::scenario::{segment_survival, Scenario, SegmentSurvival};
use flowkv_core::strategy::{SessionError, TurnObserver, TurnOutcome};
use flowkv_core::{Model, Session, SessionConfig, Strategy, TurnRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SweepConfig;
use crate::HarnessError;

pub const SWEEP_HEADER: &str = "# flowkv-sweep v1";
pub const SUMMARY_HEADER: &str = "# flowkv-summary v1";
pub const TIMING_HEADER: &str = "# flowkv-timing v1";

/// One point of the grid besides the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: Strategy,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnReport {
    pub record: TurnRecord,
    pub response: Vec<u32>,
    /// Post-compression size over the uncompressed history at that instant.
    pub cache_fraction: f64,
    /// Per-segment survival after the turn completes.
    pub survival: Vec<SegmentSurvival>,
    pub timing: TimingStats,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario_id: String,
    pub policy: PolicyKind,
    pub cell: Cell,
    pub turns: Vec<TurnReport>,
    pub final_ledger: CompressionLedger,
    pub cache_fraction: f64,
    pub pool: CachePool,
}

struct Probe<'a>(&'a mut TimingProbe);

impl TurnObserver for Probe<'_> {
    fn on_prefilled(&mut self) {
        self.0.mark_prefill();
    }

    fn on_token(&mut self, _index: usize) {
        self.0.mark_token();
    }
}

pub fn session_config(cfg: &SweepConfig, cell: Cell) -> Result<SessionConfig, HarnessError> {
    Ok(SessionConfig {
        max_response_tokens: cfg.max_response_tokens,
        eos_token: cfg.eos_token,
        ..SessionConfig::new(cell.strategy, cfg.policy_for_seed(cell.seed), cfg.budget(cell.ratio)?)
    })
}

/// Runs one scenario under one cell. `model` must be built from
/// `cfg.model_for_seed(cell.seed)`.
pub fn run_scenario(model: &Model, s: &Scenario, cell: Cell, cfg: &SweepConfig) -> Result<ScenarioReport, HarnessError> {
    cfg.check_scenario(s)?;
    let session_cfg = session_config(cfg, cell)?;
    let wrap = |source: SessionError| HarnessError::Session { cell: format!("{} {:?}", s.id, cell), source };
    let mut session = Session::new(model, session_cfg, &s.system_prompt).map_err(wrap)?;
    let mut turns = Vec::with_capacity(s.turns.len());
    for query in &s.turns {
        let mut outcome: Option<TurnOutcome> = None;
        let timing = measure_timing(|probe| {
            let out = session.run_turn_observed(query, &mut Probe(probe))?;
            let fraction = cache_fraction(out.record.post_compress_len, out.record.s_full);
            outcome = Some(out);
            Ok(fraction)
        })
        .map_err(wrap)?;
        let TurnOutcome { record, response } = outcome.expect("set on success");
        turns.push(TurnReport {
            cache_fraction: timing.cache_fraction,
            survival: segment_survival(session.pool()),
            record,
            response,
            timing,
        });
    }
    let pool = session.into_pool();
    Ok(ScenarioReport {
        scenario_id: s.id.clone(),
        policy: cfg.policy.kind,
        cell,
        final_ledger: pool.compression_ledger(),
        cache_fraction: turns.last().map_or(1.0, |t| t.cache_fraction),
        turns,
        pool,
    })
}

/// Ledger and budget laws every turn record must satisfy.
pub fn record_violations(records: &[TurnRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        for (kind, &count) in &r.ledger {
            let expected = match r.strategy {
                _ if kind.turn() == r.turn => 0,
                Strategy::Full => 0,
                Strategy::Baseline => r.turn - kind.turn(),
                Strategy::FlowKv => 1,
            };
            if count != expected {
                out.push(format!(
                    "{} turn {}: {kind} compressed {count} times, expected {expected}",
                    r.strategy.label(),
                    r.turn
                ));
            }
        }
        let compresses = r.strategy != Strategy::Full;
        if compresses && !r.clamped && r.post_compress_len != r.target && r.post_compress_len != r.pre_compress_len {
            out.push(format!(
                "{} turn {}: post-compression size {} misses target {}",
                r.strategy.label(),
                r.turn,
                r.post_compress_len,
                r.target
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario_id: String,
    pub strategy: Strategy,
    pub policy: PolicyKind,
    pub ratio: f64,
    pub seed: u64,
    pub turn: u32,
    pub s_full: usize,
    pub target: usize,
    pub post_len: usize,
    pub clamped: bool,
    pub ledger: String,
    pub cache_fraction: f64,
    pub sys_survival: f64,
    pub mean_survival: f64,
    pub min_survival: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario_id: String,
    pub strategy: Strategy,
    pub policy: PolicyKind,
    pub ratio: f64,
    pub seed: u64,
    pub turn: u32,
    pub prefill_s: f64,
    pub ttft_s: f64,
    pub tpot_ms: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub strategy: Strategy,
    pub policy: PolicyKind,
    pub ratio: f64,
    pub turn: u32,
    pub runs: usize,
    pub post_len_mean: f64,
    pub post_len_std: f64,
    pub cache_fraction_mean: f64,
    pub cache_fraction_std: f64,
    pub sys_survival_mean: f64,
    pub sys_survival_std: f64,
    pub mean_survival_mean: f64,
    pub mean_survival_std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub timing: Vec<TimingRow>,
    pub failures: usize,
    pub violations: Vec<String>,
}

pub fn format_ledger(ledger: &CompressionLedger) -> String {
    ledger.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn sweep_row(report: &ScenarioReport, t: &TurnReport) -> SweepRow {
    let fractions: Vec<f64> = t.survival.iter().map(|s| s.fraction).collect();
    SweepRow {
        scenario_id: report.scenario_id.clone(),
        strategy: report.cell.strategy,
        policy: report.policy,
        ratio: report.cell.ratio,
        seed: report.cell.seed,
        turn: t.record.turn,
        s_full: t.record.s_full,
        target: t.record.target,
        post_len: t.record.post_compress_len,
        clamped: t.record.clamped,
        ledger: format_ledger(&t.record.ledger),
        cache_fraction: t.cache_fraction,
        sys_survival: fractions.first().copied().unwrap_or(1.0),
        mean_survival: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
        min_survival: fractions.iter().copied().fold(1.0, f64::min),
        status: "ok".into(),
    }
}

fn error_row(s: &Scenario, policy: PolicyKind, cell: Cell, err: &HarnessError) -> SweepRow {
    SweepRow {
        scenario_id: s.id.clone(),
        strategy: cell.strategy,
        policy,
        ratio: cell.ratio,
        seed: cell.seed,
        turn: 0,
        s_full: 0,
        target: 0,
        post_len: 0,
        clamped: false,
        ledger: String::new(),
        cache_fraction: 0.0,
        sys_survival: 0.0,
        mean_survival: 0.0,
        min_survival: 0.0,
        status: format!("error: {err}"),
    }
}

fn row_order(a: &SweepRow, b: &SweepRow) -> Ordering {
    (&a.scenario_id, a.strategy, a.policy.label())
        .cmp(&(&b.scenario_id, b.strategy, b.policy.label()))
        .then(a.ratio.total_cmp(&b.ratio))
        .then((a.seed, a.turn).cmp(&(b.seed, b.turn)))
}

fn timing_order(a: &TimingRow, b: &TimingRow) -> Ordering {
    (&a.scenario_id, a.strategy, a.policy.label())
        .cmp(&(&b.scenario_id, b.strategy, b.policy.label()))
        .then(a.ratio.total_cmp(&b.ratio))
        .then((a.seed, a.turn).cmp(&(b.seed, b.turn)))
}

/// FlowKV and baseline must land on the same size at every compression.
pub fn fairness_violations(rows: &[SweepRow]) -> Vec<String> {
    let mut by_key: BTreeMap<(String, &str, u64, u64, u32), BTreeMap<Strategy, usize>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        by_key
            .entry((r.scenario_id.clone(), r.policy.label(), r.ratio.to_bits(), r.seed, r.turn))
            .or_default()
            .insert(r.strategy, r.post_len);
    }
    by_key
        .into_iter()
        .filter_map(|((id, policy, ratio, seed, turn), sizes)| {
            let (b, f) = (sizes.get(&Strategy::Baseline)?, sizes.get(&Strategy::FlowKv)?);
            (b.abs_diff(*f) > 1).then(|| {
                format!(
                    "{id} {policy} ratio {} seed {seed} turn {turn}: baseline {b} vs flowkv {f}",
                    f64::from_bits(ratio)
                )
            })
        })
        .collect()
}

/// Runs the full grid on `jobs` worker threads (0 = rayon default).
/// Failed cells become error rows; the rest of the grid still runs.
pub fn run_sweep(scenarios: &[Scenario], cfg: &SweepConfig, jobs: usize) -> Result<SweepReport, HarnessError> {
    cfg.validate()?;
    let models: BTreeMap<u64, Model> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            Model::new(cfg.model_for_seed(seed)).map(|m| (seed, m)).map_err(|e| HarnessError::Config(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for s in scenarios {
        for &strategy in &cfg.strategies {
            for &ratio in &cfg.ratios {
                for &seed in &cfg.seeds {
                    cells.push((s, Cell { strategy, ratio, seed }));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        cells.par_iter().map(|&(s, cell)| (s, cell, run_scenario(&models[&cell.seed], s, cell, cfg))).collect()
    });

    let mut report = SweepReport::default();
    for (s, cell, result) in results {
        match result {
            Ok(r) => {
                let records: Vec<TurnRecord> = r.turns.iter().map(|t| t.record.clone()).collect();
                report
                    .violations
                    .extend(record_violations(&records).into_iter().map(|v| format!("{} seed {}: {v}", s.id, cell.seed)));
                for t in &r.turns {
                    report.rows.push(sweep_row(&r, t));
                    report.timing.push(TimingRow {
                        scenario_id: r.scenario_id.clone(),
                        strategy: cell.strategy,
                        policy: r.policy,
                        ratio: cell.ratio,
                        seed: cell.seed,
                        turn: t.record.turn,
                        prefill_s: t.timing.prefill_s,
                        ttft_s: t.timing.ttft_s,
                        tpot_ms: t.timing.tpot_ms,
                        total_s: t.timing.total_gen_s,
                    });
                }
            }
            Err(e) => {
                report.failures += 1;
                report.rows.push(error_row(s, cfg.policy.kind, cell, &e));
            }
        }
    }
    report.rows.sort_by(row_order);
    report.timing.sort_by(timing_order);
    report.violations.extend(fairness_violations(&report.rows));
    Ok(report)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation over seeds for each cell and turn.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(&SweepRow, Vec<&SweepRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let same = |g: &SweepRow| {
            g.scenario_id == r.scenario_id
                && g.strategy == r.strategy
                && g.policy == r.policy
                && g.ratio == r.ratio
                && g.turn == r.turn
        };
        match groups.iter_mut().find(|(k, _)| same(k)) {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(k, m)| {
            let stat = |f: fn(&SweepRow) -> f64| mean_std(&m.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (post_len_mean, post_len_std) = stat(|r| r.post_len as f64);
            let (cache_fraction_mean, cache_fraction_std) = stat(|r| r.cache_fraction);
            let (sys_survival_mean, sys_survival_std) = stat(|r| r.sys_survival);
            let (mean_survival_mean, mean_survival_std) = stat(|r| r.mean_survival);
            SummaryRow {
                scenario_id: k.scenario_id.clone(),
                strategy: k.strategy,
                policy: k.policy,
                ratio: k.ratio,
                turn: k.turn,
                runs: m.len(),
                post_len_mean,
                post_len_std,
                cache_fraction_mean,
                cache_fraction_std,
                sys_survival_mean,
                sys_survival_std,
                mean_survival_mean,
                mean_survival_std,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.scenario_id, a.strategy, a.policy.label())
            .cmp(&(&b.scenario_id, b.strategy, b.policy.label()))
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.turn.cmp(&b.turn))
    });
    out
}

/// Serializes rows under a versioned comment line.
pub fn to_csv<T: Serialize>(header: &str, rows: &[T]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    writeln!(buf, "{header}")?;
    let mut w = csv::Writer::from_writer(&mut buf);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Reads rows back, checking the version line first.
pub fn from_csv<T: for<'de> Deserialize<'de>>(header: &str, text: &str) -> Result<Vec<T>, HarnessError> {
    let body = text
        .strip_prefix(header)
        .and_then(|rest| rest.strip_prefix('\n'))
        .ok_or_else(|| HarnessError::Config(format!("missing header line {header:?}")))?;
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(HarnessError::from)
}
