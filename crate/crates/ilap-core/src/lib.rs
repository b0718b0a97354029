//! Interactive learning for allocation and pricing.
//!
//! A provider repeatedly matches users to capacity-limited items while
//! learning the reward matrix from noisy feedback on the pairs it
//! assigns. Each round it fits an estimate, builds a confidence set,
//! solves for an optimistic allocation together with supporting dual
//! prices, offers discounted prices, and scores the outcome against a
//! clairvoyant solution of the same market.
//!
//! Module map:
//! - [`market`]: reward matrices, constraints, allocations, prices, and
//!   the feedback model.
//! - [`solver`]: exact transportation solver with minimal supporting
//!   prices and a stability audit.
//! - [`estimator`]: ridge and low-rank estimation with confidence radii.
//! - [`policy`]: optimistic decision rule and price discounting.
//! - [`baselines`]: certainty-equivalent, ranker, per-pair bound, and
//!   clairvoyant reference policies.
//! - [`metrics`]: per-round scoring, theoretical envelopes, aggregation.
//! - [`data`]: synthetic instances, constraint samplers, ratings
//!   ingestion, and matrix completion.
//! - [`harness`]: experiment configuration, the simulation loop, and CSV
//!   reporting.
//! - [`rng`]: deterministic stream derivation so runs are reproducible
//!   and comparisons are paired.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) on
// purpose: the negation rejects NaN, which `x <= 0.0` would accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numeric loops here index several parallel arrays at once; iterator
// chains over zipped slices read worse than the plain index.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use estimator::{
    beta_star, confidence_width, empirical_norm, rho_star, ConfidenceSpec, EstimatorState, Mode,
    NormKind,
};
pub use harness::{run_compare, run_experiment, run_seed, run_sim, Algorithm, Setting, SimConfig};
pub use market::{Allocation, ConstraintProfile, PriceVector, RewardMatrix, RoundFeedback};
pub use metrics::{oracle_welfare, score_round, theoretical_bound, RoundScore};
pub use policy::{decide, discounted_prices, nu_default, OfuDecision};
pub use solver::{solve_allocation, verify_stability, AllocationOutcome};
