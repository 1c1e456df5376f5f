//! Entity-level retrievability auditing for dense retrievers.
//!
//! The crate measures how often an entity surfaces in the top-k of a cosine
//! ranking against a controlled pool of unrelated competitors (its Retrieval
//! Probability Score, RPS), learns probes that predict that score from the
//! entity embedding alone, and uses those probes at indexing time to find
//! likely blind spots in documents and augment them with reference-KB context.
//!
//! Module map:
//!
//! - [`corpus`]: entity records, surface-form grounding, neutral pools, documents
//! - [`embedding`]: embedding vectors, span pooling, providers and the binary store
//! - [`bridge`]: newline-delimited JSON client for an external model sidecar
//! - [`rps`]: candidate ranking, hits, RPS, N/k sweeps, tercile bands
//! - [`geometry`]: multiclass LDA projections and the max-score association delta
//! - [`probes`]: ridge and MLP probes, metrics, splits, hyperparameter sweeps
//! - [`remedy`]: NER, diagnosis, BM25 KB lookup, expansion and synthesis views
//! - [`eval`]: view-aggregated dense retrieval, nDCG@k, benchmark averaging
//! - [`planted`]: synthetic corpora with planted geometry for experiments
//! - [`pipeline`]: config-driven stages behind the `argus` binary
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

pub mod bridge;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod planted;
pub mod probes;
pub mod remedy;
pub mod rps;
pub mod seed;
pub mod text;
pub mod workers;

pub use error::{Error, Result};
