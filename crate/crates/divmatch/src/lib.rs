//! Diversified matching engine.
//!
//! Builds a heterogeneous preference network from interaction logs, learns
//! node embeddings with a two-layer field-level graph attention network under
//! a neighbor-similarity objective, and retrieves accurate + diverse top-N
//! video candidates through video/tag/media channels. Ships an evaluation
//! harness (hit rate + nine diversity metrics) and a synthetic corpus
//! generator with planted community structure.
//!
//! The high-level flow is `synth -> build-graph -> train -> embed -> match ->
//! evaluate`; each stage is usable as a library call, via the runnable
//! examples, or through the `divmatch` binary.

pub mod embeddings;
pub mod error;
pub mod features;
pub mod graph;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub(crate) mod binio;
pub(crate) mod util;

pub use error::{Error, Result};
