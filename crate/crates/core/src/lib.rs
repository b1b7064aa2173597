//! Compressed per-flow packet counting with expander-graph counter banks.
//!
//! Flows are homogeneous Poisson processes sampled once per epoch. Their
//! cumulative counts are folded into a small bank of counters through the
//! adjacency matrix of a random left-regular bipartite graph, and two decoders
//! recover rates from the counters:
//!
//! * [`direct`]: l1 minimization subject to the counter constraints, followed
//!   by clipping and division by the elapsed time.
//! * [`pmle`]: penalized Poisson maximum likelihood over a quantized candidate
//!   set, optionally preceded by whale localization that shrinks the search to
//!   flows whose counters are all among the largest.
//!
//! [`experiment`] drives seeded sweeps over the number of heavy flows and
//! persists per-trial results as CSV.

// `!(x > 0.0)` is how parameter checks reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod direct;
pub mod error;
pub mod experiment;
pub mod expander;
pub mod metrics;
pub mod pmle;
pub mod seed;
pub mod stream;

pub use error::{Error, Result};
pub use expander::{BipartiteGraph, CoverSet, ExpansionReport};
pub use stream::{Magnitude, RateVector, SignalSpec, StreamState};
