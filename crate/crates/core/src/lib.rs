//! Reliability-aware placement of replicated services on failure-prone
//! homogeneous machines.
//!
//! The pipeline has two stages. [`homogeneous`] sizes every service
//! (replica count and per-replica CPU slice) from a relaxed problem in which
//! memory and CPU are pooled across the platform, then corrects the sizes
//! against the exact binomial failure law. [`colgen`] packs the slices onto
//! machines by column generation over machine configurations, pricing new
//! configurations with the split-knapsack program in [`knapsack`].
//!
//! [`rare_event`] estimates the failure probability of any resulting plan by
//! multilevel splitting, which stays cheap for probabilities far below what
//! crude Monte Carlo can reach.

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod colgen;
pub mod error;
pub mod exec;
pub mod harness;
pub mod homogeneous;
pub mod knapsack;
pub mod model;
pub mod rare_event;
pub mod reliability;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{AllocationPlan, Configuration, HomogeneousPlan, Platform, Scenario, Service};
