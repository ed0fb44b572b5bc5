//! Training engine for neural collaborative filtering on implicit-feedback
//! bipartite graphs, built around five interchangeable mini-batch sampling
//! strategies with exact per-batch cost accounting.
//!
//! The pipeline is: [`graph`] (data) → [`distributions`] (data and noise
//! marginals) → [`sampler`] (mini-batches) → [`model`] (functional
//! embeddings) → [`losses`] (batch objective and score gradients) →
//! [`trainer`] (optimizer loop, cost ledger, speedup protocol) → [`eval`].

pub mod cli;
pub mod config;
pub mod distributions;
pub mod draw;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod ledger;
pub mod losses;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
