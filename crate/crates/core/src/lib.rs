//! Benchmarking harness for brain-to-text sequence decoders.
//!
//! The harness trains a small transformer encoder-decoder on word-level
//! feature sequences, then evaluates it across the 2x2 matrix of
//! {signal, noise} training inputs and {signal, noise} evaluation inputs,
//! under both teacher-forced and free-running decoding. A decoder whose
//! scores do not move when its inputs are replaced by Gaussian noise is
//! memorizing label statistics rather than reading its input.
//!
//! Module map:
//!
//! - [`data`]: corpus format, validation, splitting, noise corpora and
//!   synthetic control corpora.
//! - [`tokenizer`]: word-level vocabulary.
//! - [`model`]: transformer encoder-decoder with hand-written backprop and SGD.
//! - [`decoding`]: teacher-forced prediction and beam search.
//! - [`metrics`]: corpus BLEU, ROUGE-1 and WER.
//! - [`harness`]: the evaluation matrix, gap summary, run artifacts and reports.
//! - [`config`]: the run configuration file.

pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
