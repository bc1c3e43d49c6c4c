//! Multitrack symbolic music modelling with a compact six-field event
//! representation: score I/O, the event codec, a decoder-only transformer
//! with per-field heads, constrained sampling, training, objective metrics
//! and relative-attention analysis.

pub mod attention;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod midi;
pub mod model;
pub mod sampler;
pub mod score;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
