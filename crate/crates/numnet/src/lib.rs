//! Numerical machine reading comprehension over DROP-style data.
//!
//! The pipeline: number-aware tokenization and ingestion ([`textnum`]), a
//! directed comparison graph over number occurrences ([`graph`]), a small
//! reverse-mode autodiff substrate ([`diffcore`]), the end-to-end network
//! with relation-typed graph reasoning ([`model`]), weak-supervision
//! candidate enumeration and greedy decoding ([`answer`]), DROP-style
//! metrics ([`metrics`]), a synthetic corpus generator ([`synth`]) and the
//! batch training/prediction drivers ([`train`]) behind the `numnet` CLI.

pub mod answer;
pub mod diffcore;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod textnum;
pub mod train;
