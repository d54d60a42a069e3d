use std::fs;
use std::path::Path;
use std::process::ExitCode;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tetris_sched::accept_model::{output_law, total_variation, AcceptanceMatrix, TokenDistribution};
use tetris_sched::metrics::MetricsReport;
use tetris_sched::selector::{cumulative_products, expected_accepted, select_oracle, select_tetris, ORACLE_MAX_CELLS};
use tetris_sched::sim_engine::run_simulation;
use tetris_sched::trace_io::{
    self, comparison_rows, write_comparison_table, write_report, write_trace, SimConfigSpec, Verbosity,
};

use crate::{BenchArgs, CompareArgs, LosslessCheckArgs, OracleCheckArgs, SimulateArgs};

pub const LOSSLESS_TOLERANCE: f64 = 1e-9;
pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const MAX_LOSSLESS_VOCAB: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tetris_sched::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Core(e) if e.is_config_error() => ExitCode::from(2),
            CliError::Core(_) => ExitCode::from(1),
        }
    }
}

type CliResult = Result<ExitCode, CliError>;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| tetris_sched::Error::Io { path: dir.to_path_buf(), source: e }.into())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

fn summary_line(r: &MetricsReport) -> String {
    let latency = r.latency.map_or_else(|| "n/a".to_string(), |l| format!("{:.4}s", l.mean));
    let mut line = format!(
        "policy={} G={:.2} VSR={} TER={} mean_latency={}",
        r.policy,
        r.total_throughput,
        fmt_opt(r.vsr),
        fmt_opt(r.ter),
        latency
    );
    if r.empty {
        line.push_str(" (empty)");
    }
    line
}

fn flags_spec(args: &SimulateArgs) -> SimConfigSpec {
    SimConfigSpec {
        batch_size: args.batch_size,
        capacity: args.capacity,
        k: args.k,
        extra: args.extra,
        policy: args.policy.clone(),
        pipeline: args.pipeline.clone(),
        steps: args.steps,
        seed: args.seed,
        ..Default::default()
    }
}

/// Config file values override inline flags; each overridden flag is logged.
fn resolve_simulate_config(args: &SimulateArgs) -> Result<SimConfigSpec, CliError> {
    let flags = flags_spec(args);
    let Some(path) = &args.config else {
        let defaults = SimConfigSpec {
            batch_size: Some(64),
            k: Some(4),
            extra: Some(0),
            policy: Some("tetris".into()),
            seed: Some(0),
            ..Default::default()
        };
        return Ok(defaults.merged_with(&flags));
    };
    let text = fs::read_to_string(path).map_err(|e| tetris_sched::Error::Io { path: path.clone(), source: e })?;
    let file: SimConfigSpec = serde_json::from_str(&text).map_err(|e| tetris_sched::Error::MalformedConfig {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let f = serde_json::to_value(&flags).expect("spec serializes");
    let c = serde_json::to_value(&file).expect("spec serializes");
    if let (Some(f), Some(c)) = (f.as_object(), c.as_object()) {
        for (key, flag_value) in f {
            let file_value = &c[key];
            if !flag_value.is_null() && !file_value.is_null() && flag_value != file_value {
                warn!("--{} {} ignored: config file sets {}", key.replace('_', "-"), flag_value, file_value);
            }
        }
    }
    Ok(flags.merged_with(&file))
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let config = resolve_simulate_config(args)?.into_config()?;
    info!("simulating {} steps with policy {}", config.steps.unwrap_or(0), config.policy);
    let (report, trace) = run_simulation(&config)?;
    create_dir(&args.out)?;
    write_trace(&trace, &args.out.join("trace.jsonl"))?;
    write_report(&report, &args.out.join("report.json"))?;
    println!("{}", summary_line(&report));
    Ok(ExitCode::SUCCESS)
}

fn run_name(r: &MetricsReport) -> String {
    format!("{}_k{}_e{}_s{}", r.policy, r.k, r.extra, r.seed)
}

pub fn compare(args: &CompareArgs) -> CliResult {
    let spec = trace_io::load_experiment(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| spec.output_dir.clone());
    info!("running {} grid cells", spec.runs.len());

    // Collected in grid order regardless of which worker finishes first.
    let results = spec
        .runs
        .par_iter()
        .map(run_simulation)
        .collect::<Result<Vec<_>, _>>()?;

    let runs_dir = out.join("runs");
    create_dir(&runs_dir)?;
    for (report, trace) in &results {
        let name = run_name(report);
        write_report(report, &runs_dir.join(format!("{name}.json")))?;
        if spec.verbosity == Verbosity::Full {
            write_trace(trace, &runs_dir.join(format!("{name}.jsonl")))?;
        }
    }
    let reports: Vec<MetricsReport> = results.into_iter().map(|(r, _)| r).collect();
    let table = out.join("comparison.csv");
    write_comparison_table(&reports, &table)?;

    for line in improvement_summary(&reports) {
        println!("{line}");
    }
    println!("wrote {} rows to {}", reports.len(), table.display());
    Ok(ExitCode::SUCCESS)
}

/// Mean tetris improvement over the best baseline, per `(k, extra)`.
fn improvement_summary(reports: &[MetricsReport]) -> Vec<String> {
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for row in comparison_rows(reports) {
        if let Some(imp) = row.improvement {
            groups.entry((row.k, row.extra)).or_default().push(imp);
        }
    }
    groups
        .into_iter()
        .map(|((k, extra), v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            format!(
                "k={k} extra={extra} improvement over best baseline: {:+.2}% (mean of {} seeds)",
                100.0 * mean,
                v.len()
            )
        })
        .collect()
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_rows: usize, max_depth: usize) -> AcceptanceMatrix {
    let n = rng.random_range(1..=max_rows);
    let rows = (0..n)
        .map(|_| {
            let depth = rng.random_range(1..=max_depth);
            (0..depth).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    AcceptanceMatrix::new(rows).expect("uniform draws are probabilities")
}

pub fn oracle_check(args: &OracleCheckArgs) -> CliResult {
    if args.max_rows == 0 || args.max_depth == 0 {
        return Err(CliError::Usage("--max-rows and --max-depth must be at least 1".into()));
    }
    let cells = args.max_rows.saturating_mul(args.max_depth);
    if cells > ORACLE_MAX_CELLS {
        return Err(CliError::Usage(format!(
            "bounds allow {cells} cells per instance; the oracle accepts at most {ORACLE_MAX_CELLS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut passed = 0u64;
    for trial in 0..args.trials {
        let m = random_instance(&mut rng, args.max_rows, args.max_depth);
        let capacity = rng.random_range(0..=args.max_capacity);
        let c = cumulative_products(&m);
        let greedy = expected_accepted(&select_tetris(&c, capacity).0, &m)?;
        let oracle = expected_accepted(&select_oracle(&c, capacity)?, &m)?;
        if (greedy - oracle).abs() >= ORACLE_TOLERANCE {
            let dump = serde_json::json!({
                "trial": trial,
                "capacity": capacity,
                "rows": m.rows(),
                "tetris_value": greedy,
                "oracle_value": oracle,
            });
            println!("{dump}");
            println!("{passed}/{} optimal before mismatch", args.trials);
            return Ok(ExitCode::from(1));
        }
        passed += 1;
    }
    println!("{passed}/{} optimal", args.trials);
    Ok(ExitCode::SUCCESS)
}

/// Random distribution over `vocab` tokens with some zero-mass entries.
pub fn random_distribution(rng: &mut ChaCha8Rng, vocab: usize) -> TokenDistribution {
    loop {
        let w: Vec<f64> = (0..vocab)
            .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return TokenDistribution::new(w.iter().map(|x| x / s).collect()).expect("normalized");
        }
    }
}

pub fn lossless_check(args: &LosslessCheckArgs) -> CliResult {
    if args.vocab == 0 || args.vocab > MAX_LOSSLESS_VOCAB {
        return Err(CliError::Usage(format!("--vocab must be in 1..={MAX_LOSSLESS_VOCAB}, got {}", args.vocab)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = 0.0f64;
    let mut failures = 0u64;
    for _ in 0..args.trials {
        let draft = random_distribution(&mut rng, args.vocab);
        let target = random_distribution(&mut rng, args.vocab);
        let tv = total_variation(&output_law(&draft, &target)?, target.probs());
        worst = worst.max(tv);
        if tv > LOSSLESS_TOLERANCE {
            failures += 1;
        }
    }
    println!(
        "{}/{} within {LOSSLESS_TOLERANCE:e}; max total variation {worst:e}",
        args.trials - failures,
        args.trials
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn bench(args: &BenchArgs) -> CliResult {
    if args.rows == 0 || args.max_capacity == 0 {
        return Err(CliError::Usage("--rows and --max-capacity must be at least 1".into()));
    }
    let mut capacities = vec![args.max_capacity];
    while *capacities.last().unwrap() > 1 && capacities.len() < 8 {
        let next = capacities.last().unwrap() / 2;
        capacities.push(next);
    }
    capacities.reverse();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    // Every row is deep enough that no capacity can exhaust it.
    let rows = (0..args.rows)
        .map(|_| (0..args.max_capacity).map(|_| rng.random_range(0.5..1.0)).collect())
        .collect();
    let c = cumulative_products(&AcceptanceMatrix::new(rows)?);

    println!("rows,capacity,extracts,inserts,peak_queue,comparisons");
    let mut ok = true;
    for cap in capacities {
        let (sel, stats) = select_tetris(&c, cap);
        println!(
            "{},{},{},{},{},{}",
            args.rows, cap, stats.extracts, stats.inserts, stats.peak_queue, stats.comparisons
        );
        if stats.peak_queue > args.rows || stats.extracts > cap || stats.extracts != sel.total() || stats.inserts > sel.total() + args.rows {
            eprintln!("operation-count bound violated at capacity {cap}: {stats:?}");
            ok = false;
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
