//! `ragqa` is an experiment engine for long-form retrieval-augmented
//! question answering over QA-pair corpora.
//!
//! The pipeline for each test question:
//!
//! 1. retrieve the `k` (default 16) nearest QA pairs from an exact flat L2
//!    index over sentence embeddings ([`index`]);
//! 2. narrow them to `n` (default 4) contexts with one of four strategies:
//!    dense order, BM25, late-interaction MaxSim, or an external relevance
//!    scorer ([`rerank`]);
//! 3. render `Context: Question: .. Answer: .. Question: <q> Answer:` under a
//!    token budget ([`prompt`]);
//! 4. generate with an external model service or a deterministic stub
//!    ([`client`]);
//! 5. score against the reference with BLEU-1, ROUGE-1, BERTScore precision
//!    and METEOR ([`metrics`]), and aggregate into a results table
//!    ([`report`]).
//!
//! [`pipeline::run_experiment`] wires it all together from an
//! [`config::ExperimentConfig`]. Every model-backed piece has a stub, so the
//! whole engine runs and tests without any ML runtime.

pub mod client;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod rerank;

pub use error::{Error, Result};
