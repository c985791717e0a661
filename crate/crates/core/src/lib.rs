//! Decentralized federated learning on a simulated peer-to-peer network.
//!
//! Workers train on private shards of a convex task, exchange models with
//! their graph neighbours and combine them with outdegree-corrected weights.
//! A per-worker trust system scores incoming connections, samples peers by
//! those scores and restores a backup model when an aggregate is damaged.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: worker topologies, transition matrices and their stationary
//!   behaviour (the bias analysis of the aggregation weights).
//! - [`model`]: flat parameter vectors, synthetic tasks, non-i.i.d.
//!   partitioning and local SGD.
//! - [`aggregate`]: aggregation weights and the convex model combination.
//! - [`dts`]: confidence scores, peer sampling and the backup/restore logic.
//! - [`runtime`]: the synchronous round engine, the event-driven
//!   asynchronous engine and adversarial workers.
//! - [`config`], [`scenario`], [`extract`], [`report`]: the experiment
//!   runner behind the `defta` command line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod config;
pub mod dts;
pub mod extract;
pub mod graph;
pub mod model;
pub mod report;
pub mod rng;
pub mod runtime;
pub mod scenario;

pub use aggregate::{aggregation_weights, phi, PeerRecord, WeightRule};
pub use config::ScenarioConfig;
pub use dts::{ConfidenceState, DtsParams};
pub use graph::{Topology, TransitionMatrix};
pub use model::{ModelVector, OptState, Task, TaskKind};
pub use runtime::{run_async, run_sync, RunReport};
