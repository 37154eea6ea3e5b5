//! densekit: a desk-scale dense retrieval training and evaluation toolkit.
//!
//! The pipeline augments training queries from a passage corpus (sentence
//! cropping and a rule-based pseudo-query generator), labels them with ranked
//! lists from several diverse teachers (BM25, a frozen hashed dual encoder,
//! imported run files), schedules that supervision progressively, trains a
//! hashed dual-encoder student with InfoNCE over sampled triplets plus
//! in-batch negatives, and evaluates retrieval with standard IR metrics.

pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod seeds;
pub mod supervision;
pub mod teachers;
pub mod training;

pub use error::{Error, Result};
