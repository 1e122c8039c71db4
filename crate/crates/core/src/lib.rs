//! Few-shot short-text classification with prototypical networks trained
//! alongside a paraphrase-consistency loss. Paraphrases come from
//! constrained diverse beam search over a pluggable conditional language
//! model.

pub mod cli;
pub mod data;
pub mod decoding;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numerics;
pub mod protaugment;
pub mod protonet;

pub use error::{Error, Result};
