//! Language-driven fine-grained retrieval.
//!
//! Category names are expanded into attribute-level descriptions, encoded into
//! a semantic bank, clustered into an attribute vocabulary, and fused into
//! per-category prototypes. A retrieval embedder is then trained under a
//! contrastive objective plus a distribution-alignment loss against those
//! prototypes, and evaluated with Recall@K on unseen classes. Every stage is
//! deterministic given its seeds and is exposed both as a library function and
//! as a CLI subcommand.

pub mod align;
pub mod bank;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod text_encode;
pub mod text_gen;
pub mod trainer;
pub mod vecmath;
pub mod vocab;

pub use error::{LafgError, Result};
