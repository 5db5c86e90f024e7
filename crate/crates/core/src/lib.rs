//! Transformer encoder-decoder with a per-token prototype-attention sublayer,
//! two-stage training, and compound-level evaluation on a synthetic
//! compositional translation benchmark.

pub mod checksum;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod prototypes;
pub mod tensor;

pub use error::{Error, Result};
