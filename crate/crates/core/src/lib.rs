//! Residual embeddings over item co-occurrence graphs for click-through-rate
//! prediction.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod nets;
pub mod optim;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
