//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flowkv_core::budget::GlobalBudget;
use flowkv_core::loss::{simulate_decay, DecayStrategy, InfoLossModel};
use flowkv_core::metrics::{ifr, InstructionResult, PromptResult};
use flowkv_core::policy::{
    select_chunkkv, select_expected_attention, select_h2o, select_random, select_snapkv, select_streaming,
    AttentionObservation, KeepBudget, PolicyConfig, PolicyKind, QueryStats,
};
use flowkv_core::scenario::{Scenario, ScenarioGenerator};
use flowkv_core::{run_session, Model, ModelConfig, SegmentKind, Session, SessionConfig, Strategy};
use flowkv_harness::bench::{run_bench, BenchConfig};
use flowkv_harness::{run_sweep, SweepConfig};
use proptest::prelude::*;
use proptest::strategy::Strategy as PropStrategy;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const RATIOS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus(count: usize, turns: usize, seed: u64) -> Vec<Scenario> {
    ScenarioGenerator { turns, ..ScenarioGenerator::default() }.generate(count, seed)
}

fn session_cfg(strategy: Strategy, kind: PolicyKind, seed: u64, budget: GlobalBudget, response: usize) -> SessionConfig {
    SessionConfig {
        max_response_tokens: response,
        ..SessionConfig::new(strategy, PolicyConfig { seed, ..PolicyConfig::with_kind(kind) }, budget)
    }
}

/// `round_half_up(s_full * (10 - tenths_removed) / 10)` in integers.
fn oracle_target(s_full: usize, ratio: f64) -> usize {
    let kept_tenths = 10 - (ratio * 10.0).round() as usize;
    ((s_full * kept_tenths + 5) / 10).clamp(1, s_full)
}

fn budget_fairness() -> Check {
    let start = Instant::now();
    let cfg = SweepConfig {
        ratios: RATIOS.to_vec(),
        strategies: vec![Strategy::Baseline, Strategy::FlowKv],
        seeds: vec![1],
        max_response_tokens: 16,
        generator: ScenarioGenerator { turns: 5, ..ScenarioGenerator::default() },
        scenario_count: 100,
        scenario_seed: 100,
        ..SweepConfig::default()
    };
    let scenarios = cfg.scenarios().map_err(|e| e.to_string())?;
    let report = run_sweep(&scenarios, &cfg, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.failures == 0, || format!("{} cells failed", report.failures))?;
    ensure(report.rows.len() == 100 * 5 * 2 * 5, || format!("{} rows", report.rows.len()))?;

    let mut pairs: BTreeMap<(String, u64, u32), Vec<usize>> = BTreeMap::new();
    let mut clamped = 0;
    for r in &report.rows {
        pairs.entry((r.scenario_id.clone(), r.ratio.to_bits(), r.turn)).or_default().push(r.post_len);
        if r.clamped {
            clamped += 1;
            continue;
        }
        let want = oracle_target(r.s_full, r.ratio);
        ensure(r.post_len == want, || {
            format!("{} {} ratio {} turn {}: size {} vs target {want}", r.scenario_id, r.strategy.label(), r.ratio, r.turn, r.post_len)
        })?;
    }
    let mut worst = 0;
    for (key, sizes) in &pairs {
        ensure(sizes.len() == 2, || format!("{key:?}: {} strategies", sizes.len()))?;
        worst = worst.max(sizes[0].abs_diff(sizes[1]));
    }
    ensure(worst <= 1, || format!("baseline and flowkv sizes differ by {worst}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} paired compressions, max size gap {worst}, {clamped} clamped rows, {:.1}s",
        pairs.len(),
        elapsed.as_secs_f64()
    ))
}

fn compression_counts() -> Check {
    let scenarios = corpus(5, 5, 200);
    let mut checked = 0;
    for seed in [1, 2, 3] {
        let model = Model::new(ModelConfig { seed, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
        for s in &scenarios {
            for kind in PolicyKind::ALL {
                for ratio in RATIOS {
                    let budget = GlobalBudget::from_ratio(ratio, false).unwrap();
                    for strategy in [Strategy::Baseline, Strategy::FlowKv] {
                        let cfg = session_cfg(strategy, kind, seed, budget, 8);
                        let run = run_session(&model, cfg, &s.system_prompt, &s.turns).map_err(|e| e.to_string())?;
                        for seg in run.pool.segments() {
                            let i = seg.kind.turn();
                            let want = match (strategy, seg.kind) {
                                (_, k) if k.turn() == 5 => 0,
                                (Strategy::Baseline, SegmentKind::SystemPrompt) => 5,
                                (Strategy::Baseline, _) => 5 - i,
                                _ => 1,
                            };
                            ensure(seg.compression_count == want, || {
                                format!(
                                    "{} {} {} ratio {ratio} seed {seed}: {} compressed {} times, expected {want}",
                                    s.id,
                                    strategy.label(),
                                    kind.label(),
                                    seg.kind,
                                    seg.compression_count
                                )
                            })?;
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{checked} five-turn sessions, every ledger exact"))
}

fn turn_one_equivalence() -> Check {
    let scenarios = corpus(10, 1, 300);
    let model = Model::new(ModelConfig { seed: 3, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for s in &scenarios {
        for kind in PolicyKind::ALL {
            for ratio in RATIOS {
                let budget = GlobalBudget::from_ratio(ratio, false).unwrap();
                let one_turn = |strategy| -> Result<_, String> {
                    let mut session = Session::new(&model, session_cfg(strategy, kind, 7, budget, 8), &s.system_prompt)
                        .map_err(|e| e.to_string())?;
                    let out = session.run_turn(&s.turns[0]).map_err(|e| e.to_string())?;
                    Ok((out.response, session.into_pool()))
                };
                let (rb, pb) = one_turn(Strategy::Baseline)?;
                let (rf, pf) = one_turn(Strategy::FlowKv)?;
                ensure(rb == rf && pb.bit_eq(&pf), || {
                    format!("{} {} ratio {ratio}: pools differ after turn 1", s.id, kind.label())
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} policy/ratio/scenario combinations bit-identical"))
}

fn decay_separation() -> Check {
    let start = Instant::now();
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for alpha in [0.3, 0.7, 0.99] {
        let model = InfoLossModel::new(alpha, 16, 0.0, 11).map_err(|e| e.to_string())?;
        let mut power = 1.0f64;
        for turns in 1..=64u32 {
            power *= alpha;
            let nested = simulate_decay(&model, turns, DecayStrategy::Nested).map_err(|e| e.to_string())?;
            let isolated = simulate_decay(&model, turns, DecayStrategy::Isolated).map_err(|e| e.to_string())?;
            worst_abs = worst_abs.max((nested.signal_coeff - power).abs()).max((isolated.signal_coeff - alpha).abs());
            let want = alpha / power;
            let rel = ((isolated.signal_coeff / nested.signal_coeff) - want).abs() / want;
            worst_rel = worst_rel.max(rel);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_abs <= 1e-12, || format!("coefficient error {worst_abs:e}"))?;
    ensure(worst_rel <= 1e-9, || format!("ratio relative error {worst_rel:e}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "max coefficient error {worst_abs:.1e}, max ratio relative error {worst_rel:.1e}, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn long_prompt_sizes() -> Check {
    let cfg = BenchConfig { prompt_len: 8192, output_len: 32, ratio: 0.9, ..BenchConfig::default() };
    let rows = run_bench(&cfg).map_err(|e| e.to_string())?;
    let by_method: BTreeMap<&str, _> = rows.iter().map(|r| (r.method.as_str(), r)).collect();
    let (base, flow) = (by_method["ChunkKV"], by_method["ChunkKV+FlowKV"]);
    for r in [base, flow] {
        ensure((r.cache_fraction - 0.1).abs() <= 1.0 / 8192.0, || format!("{}: fraction {}", r.method, r.cache_fraction))?;
    }
    ensure(base.cache_len == flow.cache_len, || format!("cache {} vs {}", base.cache_len, flow.cache_len))?;
    ensure(by_method["FullKV"].cache_fraction == 1.0, || "FullKV compressed".into())?;
    Ok(format!(
        "ChunkKV {:.4} ({} tokens), ChunkKV+FlowKV {:.4} ({} tokens); ttft {:.2}s / {:.2}s / {:.2}s",
        base.cache_fraction,
        base.cache_len,
        flow.cache_fraction,
        flow.cache_len,
        by_method["FullKV"].ttft_s,
        base.ttft_s,
        flow.ttft_s
    ))
}

/// Lexicographic keys, smaller first.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum Key {
    Int(i64),
    Real(f64),
}

fn oracle_pick(keys: Vec<Vec<Key>>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| {
        let mut ka = keys[a].clone();
        let mut kb = keys[b].clone();
        ka.push(Key::Int(a as i64));
        kb.push(Key::Int(b as i64));
        ka.partial_cmp(&kb).expect("finite keys")
    });
    let mut chosen: Vec<usize> = idx.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add((i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rows of sixteenths, so every mean and chunk average is exact.
fn random_observation(rng: &mut ChaCha8Rng, n: usize) -> (usize, Vec<f64>, Vec<usize>) {
    let rows = [1, 2, 4][rng.random_range(0..3)];
    let mut scores = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        let mut w = vec![0u32; n];
        for _ in 0..16 {
            w[rng.random_range(0..n)] += 1;
        }
        scores.extend(w.iter().map(|&x| f64::from(x) / 16.0));
    }
    let tail = rng.random_range(0..=n.min(4));
    let observers = (n - tail..n).collect();
    (rows, scores, observers)
}

fn policy_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let instances = 1000;
    for t in 0..instances {
        let n = rng.random_range(1..=16usize);
        let k = rng.random_range(1..=n);
        let budget = KeepBudget::new(k, n).unwrap();
        let fail = |policy: &str, got: &[usize], want: &[usize]| {
            format!("instance {t} ({policy}, n {n}, k {k}): got {got:?}, oracle {want:?}")
        };

        let sink = rng.random_range(0..=6usize);
        let cfg = PolicyConfig { sink_count: sink, ..PolicyConfig::with_kind(PolicyKind::Streaming) };
        let got = select_streaming(n, budget, &cfg).map_err(|e| e.to_string())?;
        let keys =
            (0..n).map(|i| if i < sink { vec![Key::Int(0), Key::Int(i as i64)] } else { vec![Key::Int(1), Key::Int(-(i as i64))] });
        let want = oracle_pick(keys.collect(), k);
        ensure(got == want, || fail("streaming", &got, &want))?;

        let (rows, scores, observers) = random_observation(&mut rng, n);
        let obs = AttentionObservation::new(rows, n, scores.clone(), observers.clone()).map_err(|e| e.to_string())?;
        let mean: Vec<f64> =
            (0..n).map(|j| (0..rows).map(|r| scores[r * n + j]).sum::<f64>() / rows as f64).collect();

        let kernel = [1, 3, 5, 7][rng.random_range(0..4)];
        let cfg = PolicyConfig { pool_kernel: kernel, ..PolicyConfig::with_kind(PolicyKind::SnapKv) };
        let got = select_snapkv(&obs, budget, &cfg).map_err(|e| e.to_string())?;
        let half = kernel as i64 / 2;
        let keys = (0..n).map(|j| {
            if observers.contains(&j) {
                return vec![Key::Int(0), Key::Int(-(j as i64))];
            }
            let pooled = (0..n).filter(|&i| (i as i64 - j as i64).abs() <= half).map(|i| mean[i]).fold(0.0, f64::max);
            vec![Key::Int(1), Key::Real(-pooled)]
        });
        let want = oracle_pick(keys.collect(), k);
        ensure(got == want, || fail("snapkv", &got, &want))?;

        let chunk = rng.random_range(1..=5usize);
        let cfg = PolicyConfig { chunk_size: chunk, ..PolicyConfig::with_kind(PolicyKind::ChunkKv) };
        let got = select_chunkkv(&obs, budget, &cfg).map_err(|e| e.to_string())?;
        let keys = (0..n).map(|j| {
            let c = j / chunk;
            let members: Vec<f64> = (0..n).filter(|&i| i / chunk == c).map(|i| mean[i]).collect();
            let avg = members.iter().sum::<f64>() / members.len() as f64;
            vec![Key::Real(-avg), Key::Int(c as i64), Key::Real(-mean[j])]
        });
        let want = oracle_pick(keys.collect(), k);
        ensure(got == want, || fail("chunkkv", &got, &want))?;

        let cumulative: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u32)) / 4.0).collect();
        let got = select_h2o(&cumulative, budget).map_err(|e| e.to_string())?;
        let want = oracle_pick(cumulative.iter().map(|&c| vec![Key::Real(-c)]).collect(), k);
        ensure(got == want, || fail("h2o", &got, &want))?;

        let d = rng.random_range(1..=4usize);
        let keys_v: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| f64::from(rng.random_range(-2..=2i32))).collect()).collect();
        let mu: Vec<f64> = (0..d).map(|_| f64::from(rng.random_range(-2..=2i32))).collect();
        let a: Vec<f64> = (0..d * d).map(|_| f64::from(rng.random_range(-1..=1i32))).collect();
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sigma[i * d + j] = (0..d).map(|r| a[r * d + i] * a[r * d + j]).sum();
            }
        }
        let stats = QueryStats { mean: mu.clone(), covariance: sigma.clone() };
        let got = select_expected_attention(&keys_v, &stats, budget).map_err(|e| e.to_string())?;
        let keys = keys_v.iter().map(|kv| {
            let lin: f64 = (0..d).map(|i| mu[i] * kv[i]).sum::<f64>() / (d as f64).sqrt();
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    quad += kv[i] * sigma[i * d + j] * kv[j];
                }
            }
            vec![Key::Real(-(lin + quad / (2.0 * d as f64)))]
        });
        let want = oracle_pick(keys.collect(), k);
        ensure(got == want, || fail("expected_attention", &got, &want))?;

        let seed = rng.random::<u64>();
        let cfg = PolicyConfig { seed, ..PolicyConfig::with_kind(PolicyKind::Random) };
        let got = select_random(n, budget, &cfg).map_err(|e| e.to_string())?;
        let keys = (0..n).map(|i| {
            let h = splitmix(seed, i as u64);
            vec![Key::Int((h >> 32) as i64), Key::Int((h & 0xFFFF_FFFF) as i64)]
        });
        let want = oracle_pick(keys.collect(), k);
        ensure(got == want, || fail("random", &got, &want))?;
    }
    Ok(format!("{instances} instances x {} selectors match the brute-force oracle", PolicyKind::ALL.len()))
}

fn prompt_results() -> impl PropStrategy<Value = Vec<PromptResult>> {
    let instruction = (any::<bool>(), any::<bool>())
        .prop_map(|(a, b)| InstructionResult { strict_pass: a && b, loose_pass: b });
    prop::collection::vec(prop::collection::vec(instruction, 1..6), 1..12).prop_map(|prompts| {
        prompts.into_iter().map(|instructions| PromptResult { prompt_id: String::new(), instructions }).collect()
    })
}

fn ifr_aggregator() -> Check {
    let p = |xs: &[(bool, bool)]| PromptResult {
        prompt_id: String::new(),
        instructions: xs.iter().map(|&(s, l)| InstructionResult { strict_pass: s, loose_pass: l }).collect(),
    };
    let ex = ifr(&[p(&[(true, true), (true, true)]), p(&[(true, true), (false, true)])]).map_err(|e| e.to_string())?;
    ensure((ex.spa, ex.sia, ex.lpa, ex.lia, ex.ifr) == (0.5, 0.75, 1.0, 1.0, 0.8125), || format!("example gave {ex:?}"))?;

    let mut runner = TestRunner::new(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() });
    runner
        .run(&prompt_results(), |prompts| {
            let s = ifr(&prompts).expect("valid input");
            let np = prompts.len() as f64;
            let all = |f: fn(&InstructionResult) -> bool| {
                prompts.iter().filter(|q| q.instructions.iter().all(f)).count() as f64 / np
            };
            let total: usize = prompts.iter().map(|q| q.instructions.len()).sum();
            let each = |f: fn(&InstructionResult) -> bool| {
                prompts.iter().flat_map(|q| &q.instructions).filter(|r| f(r)).count() as f64 / total as f64
            };
            prop_assert!((s.spa - all(|r| r.strict_pass)).abs() < 1e-12);
            prop_assert!((s.lpa - all(|r| r.loose_pass)).abs() < 1e-12);
            prop_assert!((s.sia - each(|r| r.strict_pass)).abs() < 1e-12);
            prop_assert!((s.lia - each(|r| r.loose_pass)).abs() < 1e-12);
            prop_assert!(s.lpa >= s.spa && s.lia >= s.sia);
            prop_assert!((s.ifr - (s.spa + s.sia + s.lpa + s.lia) / 4.0).abs() <= 1e-12);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("worked example exact; 500 random cases hold".into())
}

fn retention_one() -> Check {
    let scenarios = corpus(20, 3, 800);
    let model = Model::new(ModelConfig { seed: 8, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
    let budget = GlobalBudget::from_ratio(1.0, true).map_err(|e| e.to_string())?;
    for s in &scenarios {
        for kind in PolicyKind::ALL {
            let runs: Vec<_> = Strategy::ALL
                .iter()
                .map(|&st| run_session(&model, session_cfg(st, kind, 8, budget, 8), &s.system_prompt, &s.turns))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            for r in &runs[1..] {
                ensure(r.responses == runs[0].responses, || format!("{} {}: responses differ", s.id, kind.label()))?;
                ensure(r.pool.same_tokens(&runs[0].pool), || format!("{} {}: pools differ", s.id, kind.label()))?;
            }
        }
    }
    Ok(format!("{} scenarios x {} policies: outputs and pools identical", scenarios.len(), PolicyKind::ALL.len()))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn survival_advantage() -> Check {
    let scenarios = corpus(100, 3, 900);
    let model = Model::new(ModelConfig { seed: 9, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
    let retention = 0.5;
    let budget = GlobalBudget::from_ratio(retention, false).unwrap();
    let (mut flow, mut base, mut base_gap, mut expected) = (vec![], vec![], vec![], vec![]);
    for (i, s) in scenarios.iter().enumerate() {
        let run = |st| run_session(&model, session_cfg(st, PolicyKind::Random, i as u64 + 1, budget, 16), &s.system_prompt, &s.turns);
        let b = run(Strategy::Baseline).map_err(|e| e.to_string())?;
        let f = run(Strategy::FlowKv).map_err(|e| e.to_string())?;
        let survival = |pool: &flowkv_core::CachePool| {
            let sys = &pool.segments()[0];
            sys.len() as f64 / sys.original_len as f64
        };
        // Uniform eviction keeps each range token with probability keep/range.
        let keep_prob = |r: &flowkv_core::TurnRecord| r.local_keep_count as f64 / r.range_len as f64;
        let want_base: f64 = b.records.iter().map(keep_prob).product();
        let want_flow = keep_prob(&f.records[0]);
        let (sb, sf) = (survival(&b.pool), survival(&f.pool));
        ensure((sf - want_flow).abs() < 1e-12, || format!("{}: flowkv survival {sf} vs {want_flow}", s.id))?;
        base.push(sb);
        flow.push(sf);
        base_gap.push(sb - want_base);
        expected.push(want_base);
    }
    let (mb, se_b) = mean_se(&base);
    let (mf, _) = mean_se(&flow);
    let (gap, se_gap) = mean_se(&base_gap);
    let (want_b, _) = mean_se(&expected);
    ensure(mf > mb, || format!("flowkv {mf:.4} does not exceed baseline {mb:.4}"))?;
    ensure(gap.abs() <= 3.0 * se_gap, || {
        format!("baseline mean {mb:.4} vs expected {want_b:.4}: gap {gap:.4} exceeds 3 SE ({se_gap:.4})")
    })?;
    ensure(mb + 3.0 * se_b >= retention.powi(3), || format!("baseline {mb:.4} below retention^3"))?;
    Ok(format!(
        "sys survival after turn 3: flowkv {mf:.4} (retention {retention}), baseline {mb:.4} +- {se_b:.4} \
         (expected {want_b:.4}, retention^3 {:.4})",
        retention.powi(3)
    ))
}

fn sweep_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{"ratios": [0.3, 0.7], "strategies": ["full", "baseline", "flowkv"], "policy": {"kind": "random"},
            "max_response_tokens": 6, "scenario_count": 3, "seeds": [1, 2, 3]}"#,
    )
    .map_err(|e| e.to_string())?;
    let run = |name: &str, jobs: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_flowkv"))
            .args(["sweep", "--jobs", jobs, "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let read = |f: &str| std::fs::read(Path::new(&out).join(f)).map_err(|e| e.to_string());
        Ok((read("sweep.csv")?, read("summary.csv")?))
    };
    let a = run("a", "1")?;
    let b = run("b", "2")?;
    let c = run("c", "1")?;
    ensure(a == b && a == c, || "sweep outputs differ between runs".into())?;
    Ok(format!("3 runs, sweep.csv {} bytes and summary.csv {} bytes identical", a.0.len(), a.1.len()))
}

fn main() {
    let checks: [(&str, fn() -> Check); 10] = [
        ("budget fairness", budget_fairness),
        ("compression-count ledger", compression_counts),
        ("turn-1 equivalence", turn_one_equivalence),
        ("decay separation", decay_separation),
        ("long-prompt cache size", long_prompt_sizes),
        ("selector oracles", policy_oracles),
        ("IFR aggregator", ifr_aggregator),
        ("retention-1 degeneracy", retention_one),
        ("system-prompt survival", survival_advantage),
        ("sweep determinism", sweep_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
