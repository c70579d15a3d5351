//! Authorship verification with a learned document encoder followed by a
//! two-covariance generative scoring layer.
//!
//! The pipeline runs as follows:
//! - [`corpus`]: JSONL pair and truth I/O, plus splits.
//! - [`preprocess`]: tokenization, vocabularies and sliding windows.
//! - [`resample`]: per-epoch balanced pair sampling.
//! - [`encoder`]: hierarchical attention encoder.
//! - [`plda`]: the Bayes factor score.
//! - [`train`]: joint optimization.
//! - [`infer`] and [`evaluate`]: calibrated answers and metrics.
//! - [`heatmap`]: attention reports.
//! - [`cli`]: the batch command surface behind the `bayes-av` binary.

pub mod error;
pub mod seed;
pub mod corpus;
pub mod preprocess;
pub mod graph;
pub mod plda;
pub mod encoder;
pub mod resample;
pub mod evaluate;
pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod optim;
pub mod synth;
pub mod heatmap;
pub mod cli;
pub mod train;

pub use error::{Error, Result};
