//! Caption decoder with inference-time hidden-state dropout.
//!
//! A GRU language model is conditioned on precomputed image features,
//! trained with Adam, and then sampled greedily while dropout stays active
//! on the recurrent state. The [`metrics`] module scores the resulting
//! captions (BLEU-4, METEOR, word-frequency KL divergence, vocabulary size
//! and length-limit exceedance) and [`harness`] runs the full sweep over
//! training and inference dropout rates.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
