//! Discrete-step simulation of batched speculative decoding.
//!
//! Each step drafts candidate tokens for every active request, lets the
//! configured policy choose which of them are verified, verifies them against
//! the ground-truth acceptance rates with cascading rejection, credits one
//! bonus token per request and refills the batch with fresh requests.
//!
//! Random quantities come from streams keyed by `(seed, step, row)` or by
//! request id (see [`crate::rng`]), so runs that differ only in policy or
//! pipeline mode are paired draw-for-draw.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accept_model::{surrogate_estimates, AcceptanceMatrix, AcceptanceSource, SurrogateConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::selector::{
    cumulative_products, expected_accepted, select_dsd, select_fixed_window, select_oracle, select_tetris,
    PolicyKind, PolicyStats, Selection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Sequential,
    Parallel,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Sequential => "sequential",
            PipelineMode::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(PipelineMode::Sequential),
            "parallel" => Ok(PipelineMode::Parallel),
            _ => Err(Error::invalid_config(
                "pipeline",
                format!("unknown pipeline `{s}`, expected sequential or parallel"),
            )),
        }
    }
}

/// Timing constants, in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub draft_per_token: f64,
    pub select_overhead: f64,
    pub verify_time: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            draft_per_token: 0.0025,
            select_overhead: 0.0003,
            verify_time: 0.025,
        }
    }
}

/// Distribution of request output lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDistribution {
    Fixed { tokens: u64 },
    /// Uniform over `min..=max`.
    Uniform { min: u64, max: u64 },
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution::Uniform { min: 64, max: 256 }
    }
}

impl LengthDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            LengthDistribution::Fixed { tokens } => tokens,
            LengthDistribution::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LengthDistribution::Fixed { tokens } if tokens == 0 => {
                Err(Error::invalid_config("target_length", "fixed length must be at least 1"))
            }
            LengthDistribution::Uniform { min, max } if min == 0 || min > max => Err(Error::invalid_config(
                "target_length",
                format!("uniform length needs 1 <= min <= max, got {min}..={max}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub batch_size: usize,
    pub capacity: usize,
    /// Base draft window; `batch_size * k == capacity`.
    pub k: usize,
    /// Extra draft tokens per row for policies that reallocate capacity.
    pub extra: usize,
    pub policy: PolicyKind,
    pub pipeline: PipelineMode,
    pub source: AcceptanceSource,
    pub surrogate: SurrogateConfig,
    pub timing: Timing,
    /// Step budget. `None` runs until `request_quota` is met.
    pub steps: Option<u64>,
    pub request_quota: Option<u64>,
    pub target_length: LengthDistribution,
    pub seed: u64,
    /// Decay of the moving-average acceptance estimate used by `dsd`.
    pub dsd_decay: f64,
    pub dsd_initial_alpha: f64,
}

impl SimConfig {
    /// A config with defaults for everything but the batch shape and policy.
    pub fn new(batch_size: usize, k: usize, extra: usize, policy: PolicyKind) -> Self {
        Self {
            batch_size,
            capacity: batch_size * k,
            k,
            extra,
            policy,
            pipeline: PipelineMode::Sequential,
            source: AcceptanceSource::Beta { a: 4.0, b: 1.5, per_row: false },
            surrogate: SurrogateConfig::default(),
            timing: Timing::default(),
            steps: Some(100),
            request_quota: None,
            target_length: LengthDistribution::default(),
            seed: 0,
            dsd_decay: 0.9,
            dsd_initial_alpha: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid_config("k", "must be at least 1"));
        }
        if self.batch_size.checked_mul(self.k) != Some(self.capacity) {
            return Err(Error::invalid_config(
                "capacity",
                format!(
                    "capacity {} must equal batch_size * k = {} * {}",
                    self.capacity, self.batch_size, self.k
                ),
            ));
        }
        let t = &self.timing;
        for (name, v) in [
            ("timing.draft_per_token", t.draft_per_token),
            ("timing.select_overhead", t.select_overhead),
            ("timing.verify_time", t.verify_time),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid_config(name, format!("must be a finite time >= 0, got {v}")));
            }
        }
        if t.verify_time <= 0.0 {
            return Err(Error::invalid_config("timing.verify_time", "must be > 0 so every step takes time"));
        }
        if self.steps.is_none() && self.request_quota.is_none() {
            return Err(Error::invalid_config("steps", "one of steps or request_quota is required"));
        }
        self.source
            .validate()
            .map_err(|e| Error::invalid_config("source", e.to_string()))?;
        self.surrogate
            .validate()
            .map_err(|e| Error::invalid_config("surrogate", e.to_string()))?;
        self.target_length.validate()?;
        if !(self.dsd_decay.is_finite() && (0.0..=1.0).contains(&self.dsd_decay)) {
            return Err(Error::invalid_config("dsd_decay", "must lie in [0, 1]"));
        }
        if !(self.dsd_initial_alpha.is_finite() && (0.0..=1.0).contains(&self.dsd_initial_alpha)) {
            return Err(Error::invalid_config("dsd_initial_alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Depth each row is drafted to before truncation.
    pub fn draft_depth(&self) -> usize {
        if self.policy.uses_extra_tokens() {
            self.k + self.extra
        } else {
            self.k
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub target_len: u64,
    pub served: u64,
    pub arrival_step: u64,
    pub completion_step: Option<u64>,
}

impl Request {
    pub fn remaining(&self) -> u64 {
        self.target_len - self.served
    }

    pub fn is_complete(&self) -> bool {
        self.served == self.target_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub id: u64,
    pub arrival_step: u64,
}

/// Everything that happened in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: u64,
    pub drafted: Vec<usize>,
    pub windows: Vec<usize>,
    pub accepted: Vec<usize>,
    /// One per active request.
    pub bonus: usize,
    pub tokens_sent: usize,
    /// Tokens credited to requests, capped at their target lengths.
    pub tokens_served: u64,
    /// Expected accepted count of this step's selection under the true rates.
    pub expected_accepted: f64,
    pub step_time: f64,
    pub completed: Vec<Completion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PolicyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_estimate: Option<f64>,
}

impl StepOutcome {
    pub fn accepted_total(&self) -> usize {
        self.accepted.iter().sum()
    }
}

/// Acceptance rates for one step: what verification uses and what the
/// selector is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftView {
    pub truth: AcceptanceMatrix,
    pub surrogate: AcceptanceMatrix,
}

impl DraftView {
    pub fn drafted(&self) -> Vec<usize> {
        (0..self.truth.num_rows()).map(|i| self.truth.depth(i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub step: u64,
    pub active: Vec<Request>,
    pub completed: Vec<Request>,
    pub next_id: u64,
    pub alpha_estimate: f64,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Self {
        let mut state = Self {
            step: 0,
            active: Vec::with_capacity(config.batch_size),
            completed: Vec::new(),
            next_id: 0,
            alpha_estimate: config.dsd_initial_alpha,
        };
        refill_batch(&mut state, config);
        state
    }
}

/// Target length of request `id`; a function of `(seed, id)` only.
fn request_length(config: &SimConfig, id: u64) -> u64 {
    let mut rng = stream_rng(config.seed, Stream::Arrivals, id, 0);
    config.target_length.sample(&mut rng)
}

/// Moves finished requests out of the batch and admits new ones until the
/// batch is full again. New arrivals take over the vacated slots in order.
pub fn refill_batch(state: &mut SimState, config: &SimConfig) {
    let mut i = 0;
    while i < state.active.len() {
        if state.active[i].is_complete() {
            let done = state.active.remove(i);
            state.completed.push(done);
        } else {
            i += 1;
        }
    }
    while state.active.len() < config.batch_size {
        let id = state.next_id;
        state.next_id += 1;
        state.active.push(Request {
            id,
            target_len: request_length(config, id),
            served: 0,
            arrival_step: state.step,
            completion_step: None,
        });
    }
}

/// Drafts up to `depth` cells per row, truncated to each request's remaining
/// length, and derives the selector's surrogate view.
pub fn draft_phase(state: &SimState, config: &SimConfig, depth: usize) -> Result<DraftView> {
    let rows = state
        .active
        .iter()
        .enumerate()
        .map(|(i, req)| {
            let d = depth.min(req.remaining() as usize).max(1);
            let mut rng = stream_rng(config.seed, Stream::Truth, state.step, i as u64);
            config.source.sample_row(i, d, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = AcceptanceMatrix::new(rows)?;
    let surrogate_cfg = SurrogateConfig {
        seed: derive_seed(config.seed ^ config.surrogate.seed.rotate_left(17), Stream::Surrogate, state.step, 0),
        ..config.surrogate.clone()
    };
    let surrogate = surrogate_estimates(&truth, &surrogate_cfg)?;
    Ok(DraftView { truth, surrogate })
}

/// Walks each row's selected window, accepting depth `j` iff every earlier
/// depth was accepted and a uniform draw falls below the true rate.
/// `row_rngs[i]` supplies the draws for row `i`.
pub fn apply_verification<R: Rng>(selection: &Selection, truth: &AcceptanceMatrix, row_rngs: &mut [R]) -> Vec<usize> {
    assert_eq!(selection.num_rows(), truth.num_rows(), "selection/matrix row mismatch");
    assert_eq!(row_rngs.len(), truth.num_rows(), "one rng per row");
    selection
        .windows()
        .iter()
        .zip(row_rngs.iter_mut())
        .enumerate()
        .map(|(i, (&k, rng))| {
            let alphas = truth.row(i);
            let mut accepted = 0;
            for &alpha in &alphas[..k] {
                if rng.random::<f64>() < alpha {
                    accepted += 1;
                } else {
                    break;
                }
            }
            accepted
        })
        .collect()
}

/// Every active request gains one token per step regardless of rejections.
pub fn bonus_tokens(state: &SimState) -> usize {
    state.active.len()
}

/// Wall time of one step. In parallel mode drafting and selection overlap
/// with verification of the previous step.
pub fn step_time(config: &SimConfig, drafted_depth: usize) -> f64 {
    let t = &config.timing;
    let draft_path = t.draft_per_token * drafted_depth as f64 + t.select_overhead;
    match config.pipeline {
        PipelineMode::Sequential => draft_path + t.verify_time,
        PipelineMode::Parallel => draft_path.max(t.verify_time),
    }
}

fn clamp_to_drafted(selection: Selection, drafted: &[usize]) -> Selection {
    Selection::from_windows(selection.windows().iter().zip(drafted).map(|(&k, &d)| k.min(d)).collect())
}

/// Runs the configured policy on the selector's view only; true rates never
/// reach a policy.
pub fn select_windows(
    config: &SimConfig,
    alpha_estimate: f64,
    surrogate: &AcceptanceMatrix,
) -> Result<(Selection, Option<PolicyStats>)> {
    let n = surrogate.num_rows();
    let drafted: Vec<usize> = (0..n).map(|i| surrogate.depth(i)).collect();
    Ok(match config.policy {
        PolicyKind::Tetris => {
            let (sel, stats) = select_tetris(&cumulative_products(surrogate), config.capacity);
            (sel, Some(stats))
        }
        PolicyKind::Oracle => (select_oracle(&cumulative_products(surrogate), config.capacity)?, None),
        PolicyKind::Sd => (
            clamp_to_drafted(select_fixed_window(n, config.k, config.capacity)?, &drafted),
            None,
        ),
        PolicyKind::Dsd => (
            clamp_to_drafted(select_dsd(alpha_estimate, n, config.capacity, config.k)?, &drafted),
            None,
        ),
    })
}

/// Advances the simulation by one step and refills the batch.
pub fn run_step(state: &mut SimState, config: &SimConfig) -> Result<StepOutcome> {
    let n = state.active.len();
    let step = state.step;

    let depth = match config.policy {
        PolicyKind::Dsd => select_dsd(state.alpha_estimate, n, config.capacity, config.k)?
            .windows()
            .first()
            .copied()
            .unwrap_or(0)
            .max(1),
        _ => config.draft_depth(),
    };
    let view = draft_phase(state, config, depth)?;
    let drafted = view.drafted();

    let (selection, stats) = select_windows(config, state.alpha_estimate, &view.surrogate)?;
    debug_assert!(selection.total() <= config.capacity);

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream_rng(config.seed, Stream::Verify, step, i as u64)).collect();
    let accepted = apply_verification(&selection, &view.truth, &mut rngs);
    let expected = expected_accepted(&selection, &view.truth)?;
    let bonus = bonus_tokens(state);

    let alpha_used = (config.policy == PolicyKind::Dsd).then_some(state.alpha_estimate);
    if config.policy == PolicyKind::Dsd {
        // Per-token conditional frequency: tokens actually evaluated stop at the first rejection.
        let evaluated: usize = accepted
            .iter()
            .zip(selection.windows())
            .map(|(&a, &k)| (a + 1).min(k))
            .sum();
        if evaluated > 0 {
            let freq = accepted.iter().sum::<usize>() as f64 / evaluated as f64;
            state.alpha_estimate = config.dsd_decay * state.alpha_estimate + (1.0 - config.dsd_decay) * freq;
        }
    }

    let mut served = 0u64;
    let mut completed = Vec::new();
    for (req, &a) in state.active.iter_mut().zip(&accepted) {
        let credit = (a as u64 + 1).min(req.remaining());
        req.served += credit;
        served += credit;
        if req.is_complete() {
            req.completion_step = Some(step);
            completed.push(Completion { id: req.id, arrival_step: req.arrival_step });
        }
    }

    let outcome = StepOutcome {
        step,
        tokens_sent: selection.total(),
        drafted: drafted.clone(),
        windows: selection.windows().to_vec(),
        accepted,
        bonus,
        tokens_served: served,
        expected_accepted: expected,
        step_time: step_time(config, drafted.iter().copied().max().unwrap_or(0)),
        completed,
        stats,
        alpha_estimate: alpha_used,
    };

    state.step += 1;
    refill_batch(state, config);
    Ok(outcome)
}

/// Runs a whole simulation and folds its trace into a report.
pub fn run_simulation(config: &SimConfig) -> Result<(MetricsReport, Vec<StepOutcome>)> {
    config.validate()?;
    let mut state = SimState::new(config);
    let mut trace = Vec::new();
    loop {
        if config.steps.is_some_and(|t| state.step >= t) {
            break;
        }
        if config.request_quota.is_some_and(|q| state.completed.len() as u64 >= q) {
            break;
        }
        trace.push(run_step(&mut state, config)?);
    }
    let report = metrics::report_from_trace(config, &trace)?;
    Ok((report, trace))
}
