use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowkv_core::loss::InfoLossModel;
use flowkv_core::metrics::{ifr, parse_prompt_results};
use flowkv_core::policy::PolicyKind;
use flowkv_core::scenario::{scenarios_to_jsonl, ScenarioGenerator};
use flowkv_core::{Model, Strategy};
use flowkv_harness::bench::{run_bench, BenchConfig};
use flowkv_harness::sweep::{self, Cell};
use flowkv_harness::{exit, loss_model_csv, run_scenario, run_sweep, sweep_exit_code, HarnessError, SweepConfig};

#[derive(Parser)]
#[command(name = "flowkv", version, about = "Multi-turn KV-cache compression experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Include raw key/value vectors in pool snapshots.
    #[arg(long, global = true)]
    full_dump: bool,
    /// Read ratios as the fraction kept rather than removed.
    #[arg(long, global = true)]
    invert_ratio: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one strategy and ratio.
    Run {
        #[arg(long, default_value = "flowkv")]
        strategy: String,
        #[arg(long)]
        ratio: Option<f64>,
        /// Scenario id; defaults to the first scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run every scenario x strategy x ratio x seed cell.
    Sweep,
    /// Nested versus isolated decay table.
    LossModel {
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 20)]
        turns: u32,
    },
    /// Long-prompt cache size and latency table. Flags override the config;
    /// the defaults are an 8192-token prompt, 16-token query, 64 output
    /// tokens, one turn, ratio 0.9 and ChunkKV.
    Bench {
        #[arg(long)]
        prompt_len: Option<usize>,
        #[arg(long)]
        query_len: Option<usize>,
        #[arg(long)]
        output_len: Option<usize>,
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        policy: Option<String>,
    },
    /// Write a synthetic scenario corpus as JSONL.
    GenScenarios {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        turns: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instruction-following summary from per-prompt JSONL results.
    Ifr { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(g: &Global) -> Result<SweepConfig, HarnessError> {
    let mut cfg = match &g.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &g.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.invert_ratio |= g.invert_ratio;
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    let g = &cli.global;
    match cli.command {
        Command::Run { strategy, ratio, scenario } => {
            let cfg = load_config(g)?;
            let strategy = Strategy::parse(&strategy)
                .ok_or_else(|| HarnessError::Config(format!("unknown strategy {strategy:?}")))?;
            let ratio = ratio.unwrap_or(cfg.ratios[0]);
            cfg.budget(ratio)?;
            let scenarios = cfg.scenarios()?;
            let s = match &scenario {
                Some(id) => scenarios
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| HarnessError::Config(format!("no scenario {id:?}")))?,
                None => &scenarios[0],
            };
            let seed = cfg.seeds[0];
            let model = Model::new(cfg.model_for_seed(seed)).map_err(|e| HarnessError::Config(e.to_string()))?;
            let report = run_scenario(&model, s, Cell { strategy, ratio, seed }, &cfg)?;
            let mut lines = String::new();
            for t in &report.turns {
                lines += &serde_json::to_string(&t.record)?;
                lines.push('\n');
            }
            let records = write(&cfg.output_dir, "turns.jsonl", &lines)?;
            let snapshot = serde_json::to_string_pretty(&report.pool.snapshot(g.full_dump))?;
            let pool = write(&cfg.output_dir, "pool.json", &snapshot)?;
            print!("{lines}");
            eprintln!(
                "{} {} ratio {ratio}: cache fraction {:.4}, ledger {}",
                s.id,
                strategy.label(),
                report.cache_fraction,
                sweep::format_ledger(&report.final_ledger)
            );
            eprintln!("wrote {} and {}", records.display(), pool.display());
            let records: Vec<_> = report.turns.iter().map(|t| t.record.clone()).collect();
            let violations = sweep::record_violations(&records);
            for v in &violations {
                eprintln!("invariant violation: {v}");
            }
            Ok(if violations.is_empty() { exit::OK } else { exit::INVARIANT })
        }
        Command::Sweep => {
            let cfg = load_config(g)?;
            let scenarios = cfg.scenarios()?;
            let report = run_sweep(&scenarios, &cfg, g.jobs)?;
            let dir = &cfg.output_dir;
            write(dir, "sweep.csv", &sweep::to_csv(sweep::SWEEP_HEADER, &report.rows)?)?;
            write(dir, "summary.csv", &sweep::to_csv(sweep::SUMMARY_HEADER, &sweep::summarize(&report.rows))?)?;
            write(dir, "timing.csv", &sweep::to_csv(sweep::TIMING_HEADER, &report.timing)?)?;
            eprintln!(
                "{} rows, {} failed cells, {} invariant violations; tables in {}",
                report.rows.len(),
                report.failures,
                report.violations.len(),
                dir.display()
            );
            for v in &report.violations {
                eprintln!("invariant violation: {v}");
            }
            Ok(sweep_exit_code(&report))
        }
        Command::LossModel { alpha, dim, noise, turns } => {
            let seed = g.seed.unwrap_or(0);
            let csv = loss_model_csv(&InfoLossModel::new(alpha, dim, noise, seed)?, turns)?;
            match &g.output_dir {
                Some(dir) => {
                    write(dir, "loss.csv", &csv)?;
                }
                None => print!("{csv}"),
            }
            Ok(exit::OK)
        }
        Command::Bench { prompt_len, query_len, output_len, turns, ratio, policy } => {
            let base = match &g.config {
                Some(path) => {
                    let text = fs::read_to_string(path)?;
                    serde_json::from_str::<BenchConfig>(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                None => BenchConfig::default(),
            };
            let kind = match policy {
                Some(p) => PolicyKind::parse(&p).ok_or_else(|| HarnessError::Config(format!("unknown policy {p:?}")))?,
                None => base.policy.kind,
            };
            let cfg = BenchConfig {
                prompt_len: prompt_len.unwrap_or(base.prompt_len),
                query_len: query_len.unwrap_or(base.query_len),
                output_len: output_len.unwrap_or(base.output_len),
                turns: turns.unwrap_or(base.turns),
                ratio: ratio.unwrap_or(base.ratio),
                invert_ratio: g.invert_ratio || base.invert_ratio,
                policy: flowkv_core::PolicyConfig { kind, ..base.policy.clone() },
                seed: g.seed.unwrap_or(base.seed),
                ..base
            };
            let rows = run_bench(&cfg)?;
            let csv = sweep::to_csv("# flowkv-bench v1", &rows)?;
            if let Some(dir) = &g.output_dir {
                write(dir, "bench.csv", &csv)?;
            }
            println!("{:<24} {:>10} {:>10} {:>10} {:>10} {:>10}", "method", "cache", "prefill s", "ttft s", "tpot ms", "total s");
            for r in &rows {
                println!(
                    "{:<24} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                    r.method, r.cache_fraction, r.prefill_s, r.ttft_s, r.tpot_ms, r.total_s
                );
            }
            Ok(exit::OK)
        }
        Command::GenScenarios { count, turns, out } => {
            let cfg = load_config(g)?;
            let generator = ScenarioGenerator { turns, vocab: cfg.model.vocab, ..cfg.generator.clone() };
            let text = scenarios_to_jsonl(&generator.generate(count, g.seed.unwrap_or(cfg.scenario_seed)));
            match out {
                Some(path) => fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(exit::OK)
        }
        Command::Ifr { input } => {
            let text = fs::read_to_string(&input)?;
            let results = parse_prompt_results(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
            let summary = ifr(&results).map_err(|e| HarnessError::Config(e.to_string()))?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(exit::OK)
        }
    }
}
