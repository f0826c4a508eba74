//! Memorization audit toolkit for small autoregressive language models.
//!
//! The crate trains a byte-level transformer on a corpus with planted
//! canaries and measures memorization at every checkpoint:
//!
//! - [`corpus`]: tokenization, ingestion, canary planting, probe extraction
//! - [`complexity`]: compression-ratio complexity of probe targets
//! - [`metric`]: Levenshtein kernels and the greedy-continuation distance
//! - [`repeats`]: n-gram index and repeat counting
//! - [`model`]: the transformer, trainer, checkpoints and weight perturbation
//! - [`dynamics`]: trajectory statistics, class labels, regressions
//! - [`diagnostic`]: cross-entropy detector for latent memorization
//! - [`report`] and [`pipeline`]: run manifests, CSV/JSON reports, charts
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod complexity;
pub mod corpus;
pub mod diagnostic;
pub mod dynamics;
pub mod error;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod repeats;
pub mod stats;

pub use error::{Error, Result};

/// Derives an independent stream seed from a base seed and a label.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
