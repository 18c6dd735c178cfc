//! Decoding-strategy laboratory built around IFDID: an Enhance stage that
//! gamma-transforms typical-token sets, followed by a Filter stage that keeps
//! only tokens whose information content sits inside an entropy band.
//!
//! The crate also carries the classical baselines (greedy, beam search with
//! duplicate n-gram blocking, temperature, top-k, nucleus, gamma sample), a
//! small n-gram language model, co-occurrence embeddings, the diversity and
//! faithfulness metrics, and the experiment harness behind the `ifdid` CLI.

pub mod decode;
pub mod dist;
pub mod embeddings;
pub mod enhance;
pub mod error;
pub mod filter;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};

/// Dense vocabulary index.
pub type TokenId = usize;
