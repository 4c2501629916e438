//! Two-stream classifier for complex-figure drawing tests: an image stream
//! (convolutional backbone plus multi-head self-attention) and a score
//! stream (frozen scorer plus demographics), fused by averaging.

pub mod baselines;
pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod qc;
pub mod training;

pub use error::{Error, Result};
