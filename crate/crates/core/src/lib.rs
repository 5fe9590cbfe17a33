//! Building blocks for assembling agent-oriented pre-training corpora.
//!
//! The crate covers the whole data path: seed ingestion and URL frontier
//! expansion, hashed n-gram embeddings with exact cosine retrieval and
//! redundancy pruning, a hashed word n-gram quality classifier with
//! rank-and-keep filtering, power-law fits of benchmark loss against the
//! agent-data mixing ratio, and token-budgeted mixture composition.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Both
//! paths produce identical results.

pub mod corpus;
pub mod embed;
pub mod fixture;
pub mod hashing;
pub mod ingest;
pub mod mix;
pub mod par;
pub mod pipeline;
pub mod quality;
pub mod retrieve;
pub mod scaling;

pub use corpus::{CorpusStats, DataClass, Document};
pub use embed::{EmbedderConfig, EmbeddingVector};
pub use mix::{MixManifest, MixSpec};
pub use quality::{FilterHyperparams, NgramLinearClassifier};
pub use scaling::ScalingCurve;

/// Version string reported by `forge version` and stamped into run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
