//! Style directions in word-embedding spaces.
//!
//! A feature vector for a lexical style dimension (complexity, formality,
//! figurativeness) is built by averaging embedding differences over a few
//! seed paraphrase pairs. New texts are scored by the similarity of their
//! token vectors to that direction, pooled from subtokens to words to the
//! whole text. The crate also provides local anisotropy corrections and a
//! pairwise classification harness with baselines and analyses.

pub mod analysis;
pub mod cli;
pub mod anisotropy;
pub mod dataset;
pub mod embedding_store;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod rng;
pub mod scoring;
pub mod source;
pub mod style_vectors;
pub mod text_pipeline;

pub use error::{Error, Result};
