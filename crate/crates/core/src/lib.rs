//! Batch speculative-decoding scheduler with greedy draft-token selection.
//!
//! The crate is split along the data flow of a single decoding step:
//!
//! - [`accept_model`]: where acceptance probabilities come from, plus the
//!   token-level rejection-sampling rule used by the target model.
//! - [`selector`]: the policies that pick which drafted tokens are sent for
//!   verification under a fixed capacity (greedy cumulative-acceptance,
//!   fixed window, adaptive common window, exhaustive oracle).
//! - [`sim_engine`]: a discrete-step serving simulator that drafts, selects,
//!   verifies with cascading rejection and refills the batch.
//! - [`metrics`]: throughput, verification success rate, target efficiency
//!   rate and latency statistics computed from step traces.
//! - [`trace_io`]: experiment configs, JSON Lines traces and CSV tables.

pub mod accept_model;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod selector;
pub mod sim_engine;
pub mod trace_io;

pub use error::{Error, Result};
