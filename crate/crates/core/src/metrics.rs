//! Throughput, verification-efficiency and latency metrics.
//!
//! Everything in a [`MetricsReport`] is a pure fold over a step trace plus
//! the config that produced it, so a stored trace can always be re-reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim_engine::{SimConfig, StepOutcome};

/// How the TER denominator is formed; echoed into every report.
pub const TER_DENOMINATOR: &str = "tokens_sent + batch_size";

/// `(accepted + N) / tau`.
pub fn per_step_throughput(accepted: f64, batch_size: usize, step_time: f64) -> Result<f64> {
    if !(step_time > 0.0) {
        return Err(Error::InvalidArgument(format!("step time must be > 0, got {step_time}")));
    }
    Ok((accepted + batch_size as f64) / step_time)
}

/// Mean that remembers whether it had anything to average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub value: f64,
    pub empty: bool,
}

/// Arithmetic mean of per-step throughputs; `0` flagged empty for no steps.
pub fn total_throughput(series: &[f64]) -> Mean {
    if series.is_empty() {
        return Mean { value: 0.0, empty: true };
    }
    Mean {
        value: series.iter().sum::<f64>() / series.len() as f64,
        empty: false,
    }
}

/// Verification success rate. `None` when nothing was sent.
pub fn vsr(accepted: u64, sent: u64) -> Result<Option<f64>> {
    if accepted > sent {
        return Err(Error::InvalidArgument(format!("accepted {accepted} exceeds sent {sent}")));
    }
    Ok((sent > 0).then(|| accepted as f64 / sent as f64))
}

/// Target efficiency rate: `(accepted + bonus) / (sent + N)`.
pub fn ter(accepted: u64, bonus: u64, sent: u64, batch_size: u64) -> Result<Option<f64>> {
    if accepted > sent {
        return Err(Error::InvalidArgument(format!("accepted {accepted} exceeds sent {sent}")));
    }
    let denom = sent + batch_size;
    Ok((denom > 0).then(|| (accepted + bonus) as f64 / denom as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `G_sd * (TER_policy - TER_sd) / TER_sd`.
    pub delta: f64,
    /// `G_sd + delta`.
    pub projected: f64,
}

pub fn projected_throughput(g_sd: f64, ter_policy: f64, ter_sd: f64) -> Result<Projection> {
    if !(ter_sd > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline TER must be > 0, got {ter_sd}")));
    }
    let delta = g_sd * (ter_policy - ter_sd) / ter_sd;
    Ok(Projection { delta, projected: g_sd + delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `None` when no request completed.
pub fn latency_stats(latencies: &[f64]) -> Option<LatencyStats> {
    if latencies.is_empty() {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(LatencyStats {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
    })
}

/// End-to-end latency of every request completed in `trace`: simulated time
/// from the start of its arrival step to the end of its completion step.
pub fn request_latencies(trace: &[StepOutcome]) -> Vec<f64> {
    // clock[s] = time at the start of step s.
    let mut clock = Vec::with_capacity(trace.len() + 1);
    clock.push(0.0);
    for s in trace {
        clock.push(clock.last().unwrap() + s.step_time);
    }
    let first = trace.first().map_or(0, |s| s.step);
    trace
        .iter()
        .enumerate()
        .flat_map(|(idx, s)| {
            let end = clock[idx + 1];
            let clock = &clock;
            s.completed
                .iter()
                .map(move |c| end - clock[(c.arrival_step.saturating_sub(first)) as usize])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub batch_size: usize,
    pub capacity: usize,
    pub k: usize,
    pub extra: usize,
    pub seed: u64,
    pub pipeline: String,
    pub steps: u64,
    /// Set when no step ran; throughputs are then `0`.
    pub empty: bool,
    /// Mean realized per-step throughput, tokens/s.
    pub total_throughput: f64,
    /// Same with the exact expected accepted count in place of the realized one.
    pub total_throughput_expected: f64,
    /// Realized throughput with every step priced at the verify time alone.
    pub total_throughput_fixed_tau: f64,
    pub per_step_throughput: Vec<f64>,
    pub vsr: Option<f64>,
    pub ter: Option<f64>,
    pub ter_denominator: String,
    pub tokens_accepted: u64,
    pub tokens_sent: u64,
    pub bonus_tokens: u64,
    pub tokens_served: u64,
    pub mean_accepted_per_step: f64,
    pub mean_expected_accepted_per_step: f64,
    pub completed_requests: usize,
    pub latency: Option<LatencyStats>,
    pub config: SimConfig,
}

/// Folds a trace into a report.
pub fn report_from_trace(config: &SimConfig, trace: &[StepOutcome]) -> Result<MetricsReport> {
    let mut realized = Vec::with_capacity(trace.len());
    let mut expected = Vec::with_capacity(trace.len());
    let mut fixed = Vec::with_capacity(trace.len());
    let (mut accepted, mut sent, mut bonus, mut served) = (0u64, 0u64, 0u64, 0u64);
    let mut expected_sum = 0.0;
    for s in trace {
        let a = s.accepted_total() as u64;
        realized.push(per_step_throughput(a as f64, s.bonus, s.step_time)?);
        expected.push(per_step_throughput(s.expected_accepted, s.bonus, s.step_time)?);
        fixed.push(per_step_throughput(a as f64, s.bonus, config.timing.verify_time)?);
        accepted += a;
        sent += s.tokens_sent as u64;
        bonus += s.bonus as u64;
        served += s.tokens_served;
        expected_sum += s.expected_accepted;
    }
    let g = total_throughput(&realized);
    let steps = trace.len() as u64;
    let per_step = |x: f64| if steps == 0 { 0.0 } else { x / steps as f64 };
    let latencies = request_latencies(trace);

    Ok(MetricsReport {
        policy: config.policy.to_string(),
        batch_size: config.batch_size,
        capacity: config.capacity,
        k: config.k,
        extra: config.extra,
        seed: config.seed,
        pipeline: config.pipeline.as_str().to_string(),
        steps,
        empty: g.empty,
        total_throughput: g.value,
        total_throughput_expected: total_throughput(&expected).value,
        total_throughput_fixed_tau: total_throughput(&fixed).value,
        per_step_throughput: realized,
        vsr: vsr(accepted, sent)?,
        ter: if steps == 0 { None } else { ter(accepted, bonus, sent, bonus)? },
        ter_denominator: TER_DENOMINATOR.to_string(),
        tokens_accepted: accepted,
        tokens_sent: sent,
        bonus_tokens: bonus,
        tokens_served: served,
        mean_accepted_per_step: per_step(accepted as f64),
        mean_expected_accepted_per_step: per_step(expected_sum),
        completed_requests: latencies.len(),
        latency: latency_stats(&latencies),
        config: config.clone(),
    })
}
