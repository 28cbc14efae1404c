//! Construction, auditing, and desk-scale evaluation of out-of-distribution
//! train/dev/test splits for corpora of utterances labelled with a
//! scenario and an action.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: the utterance record, JSONL ingestion, synthetic fixtures.
//! - [`divergence`]: categorical distributions, the Chernoff coefficient and
//!   an incrementally updated paired state used by the greedy optimiser.
//! - [`splitters`]: OOV, compositional (DBCA), double-action and
//!   microphone-mismatch split construction with in-distribution controls.
//! - [`stats`]: per-split size / label overlap / similarity audits.
//! - [`eval`]: bag-of-words softmax regression, TOPK loss, micro-F1 and
//!   bootstrap confidence intervals.
//! - [`attribution`]: Integrated Gradients over the linear model and the
//!   top-word frequency matrices built from it.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results never
//! depend on the number of worker threads.

pub mod attribution;
pub mod corpus;
pub mod divergence;
pub mod eval;
pub mod par;
pub mod rng;
pub mod splitters;
pub mod stats;

mod error;

pub use error::{Error, ErrorKind, Result};
