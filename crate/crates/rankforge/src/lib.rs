//! rankforge: train-from-scratch listwise text ranking at desk scale.
//!
//! The crate is organized as a small stack:
//!
//! - [`tensor`]: reverse-mode autodiff over dense f64 tensors (the only
//!   numeric engine in the crate; everything trains through it).
//! - [`losses`]: pointwise / pairwise / listwise ranking losses as pure
//!   functions over labeled score lists, with analytic gradients.
//! - [`metrics`]: rank-based IR metrics (MRR, NDCG, MAP, Recall) and a
//!   paired two-sided Student t-test.
//! - [`data`]: candidate lists, tokenizer + vocabulary, input templates,
//!   list sampling, and the JSONL / TREC interchange formats.
//! - [`model`]: tiny encoder-decoder rankers scored from a single decoder
//!   step, plus encoder-pooling and generation-probability variants.
//! - [`train`]: seeded, deterministic training loop (SGD / Adam).
//! - [`synth`]: reproducible synthetic retrieval corpora with a planted
//!   key-phrase signal.
//! - [`eval`]: run-file evaluation, metric tables, significance testing.
//! - [`experiments`]: gradient checks, the default benchmark, sweeps, and
//!   the zero-shot transfer harness used by the CLI.

pub mod data;
pub mod eval;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
