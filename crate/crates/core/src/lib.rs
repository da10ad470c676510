//! Reliability-scored decentralized retrieval-augmented generation.
//!
//! Independent data sources serve documents; an LLM service samples sources by
//! usefulness, fuses retrieval scores with per-source reliability, attributes
//! the generated answer back to sentences, and submits signed score updates to
//! an in-process ledger that runs the score-update contract and keeps an
//! append-only audit log.
//!
//! Module map:
//! - [`corpus`]: QA corpus loading and the two pollution environments.
//! - [`retrieval`]: hashed n-gram embedder, flat indexes, source sampling, fused reranking.
//! - [`answer`]: the answerer abstraction (deterministic oracle and HTTP chat endpoint).
//! - [`scoring`]: sentence importance, aggregation, grounding and score deltas.
//! - [`ledger`]: accounts, state digests, the contract state machine, events and gas.
//! - [`service`]: the per-query orchestrator tying everything together.
//! - [`experiment`]: environment generation, episode runs, traces and metrics.

pub mod answer;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod ledger;
pub mod retrieval;
pub mod rng;
pub mod scoring;
pub mod service;
pub mod text;

pub use error::{Error, Result};
