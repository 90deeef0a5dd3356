//! Semi-supervised tuning of a class-embedding head over frozen embeddings.
//!
//! The crate is `no_std` and needs only `alloc`. Everything here is pure
//! computation over in-memory matrices; file formats and the command line live
//! in the companion `semitune` crate.
//!
//! Pipeline, in order:
//!
//! 1. [`scoring`]: zero-shot class probabilities from cosine similarity and a
//!    temperature softmax, plus per-sample confidence.
//! 2. [`sampler`]: pick the labelled set by dropping the most and least
//!    confident quantiles, clustering the rest with k-means and keeping the
//!    medoid of every cluster.
//! 3. [`pseudo`]: use the labelled samples as fixed cluster centres and give the
//!    `p` nearest members of every cluster the centre's label.
//! 4. [`ssl`]: per-class top-confidence pseudo-labels, top-k candidate masks for
//!    the rest, and the combined supervised + partial-label loss.
//! 5. [`trainer`]: SGD on the learnable head over several sessions.
//!
//! [`synth`] generates Gaussian-mixture benchmarks with controllable anchor
//! miscalibration and holds the brute-force oracles used by the tests.
#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
mod par;
pub mod pipeline;
pub mod pseudo;
pub mod rng;
pub mod sampler;
pub mod scoring;
pub mod ssl;
pub mod synth;
pub mod trainer;

pub use data::{CandidateMask, ClassEmbeddings, EmbeddingSet, LabelSets, ProbMatrix};
pub use error::{Error, Result};
pub use scoring::Temperature;
