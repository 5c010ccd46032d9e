//! Retrieval-augmented speech-prompt selection for prompt-based TTS.
//!
//! The crate covers the three stages of the pipeline: indexing candidate
//! prompts with the audio side of a context-aware contrastive dual encoder,
//! retrieving them with the text side (current sentence fused with its
//! neighbours through cross attention), and generating speech from the
//! concatenation of the best prompts. A synthetic audiobook corpus, a small
//! tensor library with hand-written gradients, and the objective evaluation
//! metrics complete the set.

// `!(x > 0.0)` is the intended way to reject NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caclap;
pub mod corpus;
mod error;
pub mod experiment;
pub mod index;
pub mod metrics;
pub mod micrograd;
pub mod pipeline;
pub mod report;

pub use error::{Error, ErrorClass, Result};
