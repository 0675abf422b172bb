//! Set-aware multimodal learning engine.
//!
//! Encodes a set of per-modality token sequences into one unified sequence,
//! applies hierarchical intra-/inter-modality residual attention over the
//! hidden states, pools to a fixed-size vector, and trains classification or
//! regression heads with AdamW under a warmup + cosine schedule. Built on a
//! minimal define-by-run reverse-mode tape with a finite-difference checker.

pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod mra;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
