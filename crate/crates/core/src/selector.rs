//! Draft-token selection policies under a per-step verification capacity.
//!
//! A selection is represented by per-row window sizes `k_i`: row `i` sends its
//! first `k_i` drafted tokens. Because tokens inside a row cascade (a token can
//! only be accepted if all earlier ones were), any sensible selection is
//! prefix-closed and the window vector is a lossless encoding of it.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accept_model::AcceptanceMatrix;
use crate::error::{Error, Result};

/// Largest instance (total drafted cells) the exhaustive oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 24;

/// A drafted cell together with the probability that it and every earlier
/// cell in its row are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub row: usize,
    /// 1-based depth within the row.
    pub depth: usize,
    pub cum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection {
    windows: Vec<usize>,
}

impl Selection {
    pub fn empty(rows: usize) -> Self {
        Self { windows: vec![0; rows] }
    }

    pub fn from_windows(windows: Vec<usize>) -> Self {
        Self { windows }
    }

    /// Builds a selection from explicit `(row, depth)` cells (depth 1-based),
    /// rejecting sets that skip a depth within a row.
    pub fn from_cells(rows: usize, cells: &[(usize, usize)]) -> Result<Self> {
        let mut present = vec![Vec::<bool>::new(); rows];
        for &(r, d) in cells {
            if r >= rows || d == 0 {
                return Err(Error::InvalidArgument(format!("cell ({r}, {d}) out of range")));
            }
            let row = &mut present[r];
            if row.len() < d {
                row.resize(d, false);
            }
            row[d - 1] = true;
        }
        let mut windows = Vec::with_capacity(rows);
        for (r, row) in present.iter().enumerate() {
            let k = row.iter().take_while(|&&b| b).count();
            if row[k..].iter().any(|&b| b) {
                return Err(Error::InvalidArgument(format!("selection skips a depth in row {r}")));
            }
            windows.push(k);
        }
        Ok(Self { windows })
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn num_rows(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, row: usize) -> usize {
        self.windows[row]
    }

    pub fn total(&self) -> usize {
        self.windows.iter().sum()
    }

    /// Selected cells in row-major order, depths 1-based.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.windows
            .iter()
            .enumerate()
            .flat_map(|(r, &k)| (1..=k).map(move |d| (r, d)))
    }
}

/// Operation counts of one greedy selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub extracts: usize,
    pub inserts: usize,
    pub peak_queue: usize,
    /// Key comparisons performed by the priority queue.
    pub comparisons: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Tetris,
    Sd,
    Dsd,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Tetris, PolicyKind::Sd, PolicyKind::Dsd, PolicyKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Tetris => "tetris",
            PolicyKind::Sd => "sd",
            PolicyKind::Dsd => "dsd",
            PolicyKind::Oracle => "oracle",
        }
    }

    /// Whether the policy drafts extra tokens beyond the base window.
    pub fn uses_extra_tokens(self) -> bool {
        matches!(self, PolicyKind::Tetris | PolicyKind::Oracle)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid_config("policy", format!("unknown policy `{s}`, expected one of tetris, sd, dsd, oracle")))
    }
}

pub fn cumulative_products(probs: &AcceptanceMatrix) -> Vec<Vec<Candidate>> {
    probs
        .rows()
        .iter()
        .enumerate()
        .map(|(row, alphas)| {
            let mut cum = 1.0;
            alphas
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    cum *= a;
                    Candidate { row, depth: j + 1, cum }
                })
                .collect()
        })
        .collect()
}

/// Heap entry; the counter is shared so every comparison the heap makes is tallied.
struct Frontier<'a> {
    cand: Candidate,
    counter: &'a Cell<u64>,
}

impl PartialEq for Frontier<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier<'_> {}

impl PartialOrd for Frontier<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier<'_> {
    // Max-heap order: higher cum first, then lower row, then lower depth.
    fn cmp(&self, other: &Self) -> Ordering {
        self.counter.set(self.counter.get() + 1);
        self.cand
            .cum
            .total_cmp(&other.cand.cum)
            .then_with(|| other.cand.row.cmp(&self.cand.row))
            .then_with(|| other.cand.depth.cmp(&self.cand.depth))
    }
}

/// Greedy selection in extraction order. Shared by [`select_tetris`] and
/// [`tetris_extraction_order`].
fn run_tetris(candidates: &[Vec<Candidate>], capacity: usize) -> (Selection, PolicyStats, Vec<Candidate>) {
    let counter = Cell::new(0u64);
    let mut stats = PolicyStats::default();
    let mut windows = vec![0usize; candidates.len()];
    let mut order = Vec::with_capacity(capacity);
    let mut heap = BinaryHeap::with_capacity(candidates.len());

    if capacity > 0 {
        for row in candidates {
            if let Some(&cand) = row.first() {
                heap.push(Frontier { cand, counter: &counter });
                stats.inserts += 1;
                stats.peak_queue = stats.peak_queue.max(heap.len());
            }
        }
    }

    while order.len() < capacity {
        let Some(Frontier { cand, .. }) = heap.pop() else {
            break;
        };
        stats.extracts += 1;
        windows[cand.row] = cand.depth;
        order.push(cand);
        // An exhausted row simply has no successor.
        if let Some(&next) = candidates[cand.row].get(cand.depth) {
            if order.len() < capacity {
                heap.push(Frontier { cand: next, counter: &counter });
                stats.inserts += 1;
                stats.peak_queue = stats.peak_queue.max(heap.len());
            }
        }
    }

    stats.comparisons = counter.get();
    (Selection { windows }, stats, order)
}

/// Greedy cumulative-acceptance selection: repeatedly take the frontier cell
/// with the highest cumulative acceptance until `capacity` cells are chosen or
/// every drafted cell is taken.
pub fn select_tetris(candidates: &[Vec<Candidate>], capacity: usize) -> (Selection, PolicyStats) {
    let (selection, stats, _) = run_tetris(candidates, capacity);
    (selection, stats)
}

/// Cells in the order [`select_tetris`] extracts them.
pub fn tetris_extraction_order(candidates: &[Vec<Candidate>], capacity: usize) -> Vec<Candidate> {
    run_tetris(candidates, capacity).2
}

/// Standard batched speculative decoding: every row gets window `k`.
pub fn select_fixed_window(rows: usize, k: usize, capacity: usize) -> Result<Selection> {
    let requested = rows.saturating_mul(k);
    if requested > capacity {
        return Err(Error::CapacityExceeded { requested, capacity });
    }
    Ok(Selection { windows: vec![k; rows] })
}

/// Common adaptive window from a scalar acceptance estimate.
///
/// Picks `k` in `1..=min(depth_limit, capacity / rows)` maximizing the
/// constant-rate expected accepted count `sum_{j<=k} alpha^j`, smallest `k`
/// on ties.
pub fn select_dsd(alpha_estimate: f64, rows: usize, capacity: usize, depth_limit: usize) -> Result<Selection> {
    if !(alpha_estimate.is_finite() && (0.0..=1.0).contains(&alpha_estimate)) {
        return Err(Error::InvalidArgument(format!("acceptance estimate {alpha_estimate} not in [0, 1]")));
    }
    if rows == 0 {
        return Ok(Selection::empty(0));
    }
    let max_k = depth_limit.min(capacity / rows);
    if max_k == 0 {
        return Ok(Selection::empty(rows));
    }
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    let (mut sum, mut pow) = (0.0, 1.0);
    for k in 1..=max_k {
        pow *= alpha_estimate;
        sum += pow;
        if sum > best {
            best = sum;
            best_k = k;
        }
    }
    Ok(Selection { windows: vec![best_k; rows] })
}

/// Exhaustive maximizer of expected accepted tokens over all prefix-closed
/// selections of size `min(capacity, total cells)`.
pub fn select_oracle(candidates: &[Vec<Candidate>], capacity: usize) -> Result<Selection> {
    let depths: Vec<usize> = candidates.iter().map(Vec::len).collect();
    let cells: usize = depths.iter().sum();
    if cells > ORACLE_MAX_CELLS {
        return Err(Error::OracleSizeExceeded { cells, limit: ORACLE_MAX_CELLS });
    }
    let target = capacity.min(cells);

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut windows = vec![0usize; depths.len()];
    enumerate_windows(&depths, target, 0, &mut windows, &mut |w| {
        let value = window_value(candidates, w);
        // Lexicographic enumeration + strict improvement keeps the smallest vector on ties.
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, w.to_vec()));
        }
    });
    let (_, windows) = best.expect("at least one window vector sums to min(capacity, cells)");
    Ok(Selection { windows })
}

fn enumerate_windows(depths: &[usize], remaining: usize, row: usize, windows: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
    if row == depths.len() {
        if remaining == 0 {
            visit(windows);
        }
        return;
    }
    let rest: usize = depths[row + 1..].iter().sum();
    let lo = remaining.saturating_sub(rest);
    let hi = depths[row].min(remaining);
    for k in lo..=hi {
        windows[row] = k;
        enumerate_windows(depths, remaining - k, row + 1, windows, visit);
    }
    windows[row] = 0;
}

fn window_value(candidates: &[Vec<Candidate>], windows: &[usize]) -> f64 {
    candidates
        .iter()
        .zip(windows)
        .flat_map(|(row, &k)| row[..k].iter().map(|c| c.cum))
        .sum()
}

/// Exact expected number of accepted draft tokens for a selection.
pub fn expected_accepted(selection: &Selection, probs: &AcceptanceMatrix) -> Result<f64> {
    if selection.num_rows() != probs.num_rows() {
        return Err(Error::InvalidArgument(format!(
            "selection has {} rows, matrix has {}",
            selection.num_rows(),
            probs.num_rows()
        )));
    }
    for (i, &k) in selection.windows().iter().enumerate() {
        if k > probs.depth(i) {
            return Err(Error::InvalidArgument(format!(
                "row {i} selects depth {k} but only {} drafted",
                probs.depth(i)
            )));
        }
    }
    Ok(window_value(&cumulative_products(probs), selection.windows()))
}
