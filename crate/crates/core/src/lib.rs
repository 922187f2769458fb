//! Sequence-to-sequence paraphrase generation with semantic input channels.
//!
//! Sentences arrive as three aligned channels (tokens, frame labels, role
//! labels). Five model families share one train/decode interface: a
//! transformer, a stacked residual LSTM, a nested variational LSTM, and
//! multi-encoder variants of the first two that fuse the semantic channels.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod semantics;
pub mod tensor;

pub use error::{Error, Result};
