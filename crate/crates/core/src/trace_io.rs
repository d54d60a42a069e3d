//! Experiment configs, JSON Lines traces, reports and comparison tables.
//!
//! # Config
//!
//! A simulation config is a JSON object whose fields mirror [`SimConfig`].
//! Only `batch_size`, `k`, `policy` and `seed` are required; `capacity`
//! defaults to `batch_size * k` and must equal it when given.
//!
//! An experiment wraps a base config and an optional grid:
//!
//! ```json
//! {
//!   "version": 1,
//!   "output_dir": "out/compare",
//!   "verbosity": "summary",
//!   "base": { "batch_size": 64, "k": 4, "policy": "sd", "seed": 1, "steps": 200,
//!             "source": {"kind": "mix", "easy": 0.95, "hard": 0.4, "frac": 0.5} },
//!   "grid": { "policy": ["sd", "dsd", "tetris"], "k": [1, 2, 3, 4], "extra": [2], "seed": [1, 2, 3] }
//! }
//! ```
//!
//! # Trace
//!
//! First line is a header `{"schema":"tetris-sched-trace","version":"1.0"}`,
//! then one [`StepOutcome`] object per line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accept_model::{AcceptanceSource, SurrogateConfig};
use crate::error::{Error, Result};
use crate::metrics::{projected_throughput, MetricsReport};
use crate::selector::PolicyKind;
use crate::sim_engine::{LengthDistribution, SimConfig, StepOutcome, Timing};

pub const TRACE_SCHEMA: &str = "tetris-sched-trace";
pub const TRACE_VERSION: &str = "1.0";
pub const EXPERIMENT_VERSION: u32 = 1;

pub const TABLE_COLUMNS: [&str; 11] = [
    "policy",
    "k",
    "extra",
    "seed",
    "G",
    "VSR",
    "TER",
    "delta_projected",
    "mean_latency",
    "p95_latency",
    "improvement",
];

/// On-disk form of a [`SimConfig`]. Policy and pipeline stay strings here so
/// that bad values are reported as config errors naming the field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigSpec {
    pub batch_size: Option<usize>,
    pub capacity: Option<usize>,
    pub k: Option<usize>,
    pub extra: Option<usize>,
    pub policy: Option<String>,
    pub pipeline: Option<String>,
    pub source: Option<AcceptanceSource>,
    pub surrogate: Option<SurrogateConfig>,
    pub timing: Option<Timing>,
    pub steps: Option<u64>,
    pub request_quota: Option<u64>,
    pub target_length: Option<LengthDistribution>,
    pub seed: Option<u64>,
    pub dsd_decay: Option<f64>,
    pub dsd_initial_alpha: Option<f64>,
}

impl SimConfigSpec {
    /// Fields set in `other` replace those in `self`.
    pub fn merged_with(&self, other: &SimConfigSpec) -> SimConfigSpec {
        macro_rules! pick {
            ($($f:ident),*) => { SimConfigSpec { $($f: other.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            batch_size, capacity, k, extra, policy, pipeline, source, surrogate, timing, steps, request_quota,
            target_length, seed, dsd_decay, dsd_initial_alpha
        )
    }

    pub fn into_config(self) -> Result<SimConfig> {
        let batch_size = self.batch_size.ok_or_else(|| Error::invalid_config("batch_size", "missing"))?;
        let k = self.k.ok_or_else(|| Error::invalid_config("k", "missing"))?;
        let policy: PolicyKind = self
            .policy
            .ok_or_else(|| Error::invalid_config("policy", "missing"))?
            .parse()?;
        let seed = self
            .seed
            .ok_or_else(|| Error::invalid_config("seed", "missing; seeds must be explicit"))?;
        let mut cfg = SimConfig::new(batch_size, k, self.extra.unwrap_or(0), policy);
        cfg.seed = seed;
        if let Some(c) = self.capacity {
            cfg.capacity = c;
        }
        if let Some(p) = self.pipeline {
            cfg.pipeline = p.parse()?;
        }
        if let Some(s) = self.source {
            cfg.source = s;
        }
        if let Some(s) = self.surrogate {
            cfg.surrogate = s;
        }
        if let Some(t) = self.timing {
            cfg.timing = t;
        }
        if self.steps.is_some() || self.request_quota.is_some() {
            cfg.steps = self.steps;
            cfg.request_quota = self.request_quota;
        }
        if let Some(t) = self.target_length {
            cfg.target_length = t;
        }
        if let Some(d) = self.dsd_decay {
            cfg.dsd_decay = d;
        }
        if let Some(a) = self.dsd_initial_alpha {
            cfg.dsd_initial_alpha = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub policy: Vec<String>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub extra: Vec<usize>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Full,
    #[default]
    Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    version: u32,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    verbosity: Verbosity,
    base: SimConfigSpec,
    #[serde(default)]
    grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub runs: Vec<SimConfig>,
    pub output_dir: PathBuf,
    pub verbosity: Verbosity,
}

fn malformed(e: serde_json::Error) -> Error {
    Error::MalformedConfig {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let spec: SimConfigSpec = serde_json::from_str(text).map_err(malformed)?;
    spec.into_config()
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sim_config(&text)
}

/// Expands `base` over the grid; an absent axis keeps the base value.
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    let file: ExperimentFile = serde_json::from_str(text).map_err(malformed)?;
    if file.version != EXPERIMENT_VERSION {
        return Err(Error::invalid_config(
            "version",
            format!("unsupported experiment version {}, expected {EXPERIMENT_VERSION}", file.version),
        ));
    }
    let g = &file.grid;
    fn axis_of<T: Clone>(v: &[T]) -> Vec<Option<T>> {
        if v.is_empty() { vec![None] } else { v.iter().cloned().map(Some).collect() }
    }

    let mut runs = Vec::new();
    for policy in axis_of(&g.policy) {
        for k in axis_of(&g.k) {
            for extra in axis_of(&g.extra) {
                for seed in axis_of(&g.seed) {
                    let over = SimConfigSpec { policy: policy.clone(), k, extra, seed, ..Default::default() };
                    runs.push(file.base.merged_with(&over).into_config()?);
                }
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::invalid_config("grid", "expands to no runs"));
    }
    Ok(ExperimentSpec {
        runs,
        output_dir: file.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        verbosity: file.verbosity,
    })
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment(&text)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    schema: String,
    version: String,
}

pub fn write_trace(outcomes: &[StepOutcome], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = TraceHeader { schema: TRACE_SCHEMA.into(), version: TRACE_VERSION.into() };
    let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];
    lines.extend(outcomes.iter().map(|o| serde_json::to_string(o).expect("step outcomes serialize")));
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<StepOutcome>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Schema { line: 1, message: "missing trace header".into() }),
    };
    let header: TraceHeader = serde_json::from_str(&header)
        .map_err(|e| Error::Schema { line: 1, message: format!("bad header: {e}") })?;
    if header.schema != TRACE_SCHEMA {
        return Err(Error::Schema { line: 1, message: format!("unexpected schema `{}`", header.schema) });
    }
    let major = TRACE_VERSION.split('.').next();
    if header.version.split('.').next() != major {
        return Err(Error::Schema { line: 1, message: format!("unsupported trace version {}", header.version) });
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let outcome = serde_json::from_str(&line).map_err(|e| Error::Schema { line: line_no, message: e.to_string() })?;
        out.push(outcome);
    }
    Ok(out)
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema { line: e.line(), message: e.to_string() })
}

/// Formats `x` with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new digit (e.g. 9.999996 -> 10.00000).
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

/// One row of the comparison table, before formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub k: usize,
    pub extra: usize,
    pub seed: u64,
    pub throughput: f64,
    pub vsr: Option<f64>,
    pub ter: Option<f64>,
    pub delta_projected: Option<f64>,
    pub mean_latency: Option<f64>,
    pub p95_latency: Option<f64>,
    /// `(G_tetris - G_best_baseline) / G_best_baseline` within the `(k, seed)`
    /// group; tetris rows only.
    pub improvement: Option<f64>,
}

/// Builds table rows sorted by `(policy, k, extra, seed)`.
///
/// `delta_projected` is taken against the `sd` run of the same `(k, seed)`
/// group; baselines for `improvement` are all non-tetris runs of that group.
pub fn comparison_rows(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(usize, u64), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.k, r.seed)).or_default().push(r);
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| {
            let group = &groups[&(r.k, r.seed)];
            let sd = group
                .iter()
                .filter(|g| g.policy == "sd")
                .min_by_key(|g| g.extra);
            let delta_projected = match (sd, r.ter) {
                (Some(sd), Some(ter)) => sd
                    .ter
                    .and_then(|ter_sd| projected_throughput(sd.total_throughput, ter, ter_sd).ok())
                    .map(|p| p.delta),
                _ => None,
            };
            let best_baseline = group
                .iter()
                .filter(|g| g.policy != "tetris" && g.policy != "oracle")
                .map(|g| g.total_throughput)
                .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
            let improvement = match (r.policy.as_str(), best_baseline) {
                ("tetris", Some(b)) if b > 0.0 => Some((r.total_throughput - b) / b),
                _ => None,
            };
            ComparisonRow {
                policy: r.policy.clone(),
                k: r.k,
                extra: r.extra,
                seed: r.seed,
                throughput: r.total_throughput,
                vsr: r.vsr,
                ter: r.ter,
                delta_projected,
                mean_latency: r.latency.map(|l| l.mean),
                p95_latency: r.latency.map(|l| l.p95),
                improvement,
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.policy, a.k, a.extra, a.seed).cmp(&(&b.policy, b.k, b.extra, b.seed)));
    rows
}

pub fn render_comparison_table(reports: &[MetricsReport]) -> String {
    let mut out = TABLE_COLUMNS.join(",");
    out.push('\n');
    for r in comparison_rows(reports) {
        let fields = [
            r.policy.clone(),
            r.k.to_string(),
            r.extra.to_string(),
            r.seed.to_string(),
            format_sig6(r.throughput),
            opt(r.vsr),
            opt(r.ter),
            opt(r.delta_projected),
            opt(r.mean_latency),
            opt(r.p95_latency),
            opt(r.improvement),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_comparison_table(reports: &[MetricsReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("comparison table needs at least one report".into()));
    }
    fs::write(path, render_comparison_table(reports)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(98.78), "98.78");
        assert_eq!(format_sig6(1234.56789), "1234.57");
        assert_eq!(format_sig6(0.833333333), "0.833333");
        assert_eq!(format_sig6(-0.0123456789), "-0.0123457");
        assert_eq!(format_sig6(100.0), "100");
        assert_eq!(format_sig6(9.9999996), "10");
        assert_eq!(format_sig6(1.5e-7), "1.50000e-7");
        assert_eq!(format_sig6(0.0), "0");
    }

    #[test]
    fn minimal_experiment() {
        let spec = parse_experiment(r#"{"version":1,"base":{"batch_size":4,"k":2,"policy":"sd","seed":1}}"#).unwrap();
        assert_eq!(spec.runs.len(), 1);
        assert_eq!(spec.runs[0].capacity, 8);
        assert_eq!(spec.verbosity, Verbosity::Summary);
    }

    #[test]
    fn experiment_errors() {
        let err = parse_experiment(r#"{"version":1,"base":{"batch_size":4,"k":2,"capacity":9,"policy":"sd","seed":1}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "capacity"), "{err}");

        let err = parse_experiment(r#"{"version":1,"base":{"batch_size":4,"k":2,"policy":"greedy","seed":1}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "policy"), "{err}");

        let err = parse_experiment("{\"version\":1,\n\"base\":{\"batch_size\":\"four\"}}").unwrap_err();
        assert!(matches!(err, Error::MalformedConfig { line: 2, .. }), "{err}");

        let err = parse_experiment(r#"{"version":1,"base":{"batch_size":4,"k":2,"policy":"sd"}}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "seed"), "{err}");

        let err = parse_experiment(r#"{"version":2,"base":{}}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "version"));
    }

    #[test]
    fn grid_expansion() {
        let spec = parse_experiment(
            r#"{"version":1,"base":{"batch_size":4,"k":1,"policy":"sd","seed":0,"steps":5},
                "grid":{"policy":["sd","dsd","tetris"],"k":[1,2,3,4],"seed":[1,2,3]}}"#,
        )
        .unwrap();
        assert_eq!(spec.runs.len(), 36);
        assert!(spec.runs.iter().all(|r| r.capacity == r.batch_size * r.k));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trace(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert!(read_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn trace_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(&path, "").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Schema { line: 1, .. })));
        fs::write(&path, "{\"schema\":\"tetris-sched-trace\",\"version\":\"2.0\"}\n").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Schema { line: 1, .. })));
        assert!(matches!(read_trace(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
