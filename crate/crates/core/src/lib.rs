//! Gradient-flow analysis of linear self-attention networks and
//! demonstration selection by gradient-flow magnitude.
//!
//! - [`lsa`]: forward pass, closed-form and multi-layer gradients, FD oracle.
//! - [`effectiveness`]: the knowledge/relevance partial order and its
//!   propagation through depth.
//! - [`store`]: demonstration pools and projection files.
//! - [`selector`]: gradient-flow scoring, offline index, top-k, prompts.
//! - [`baselines`]: BM25, cosine and MMR rankers.
//! - [`synth`]: synthetic in-context regression harness.

pub mod baselines;
pub mod effectiveness;
pub mod error;
pub mod lsa;
pub mod opcount;
pub mod prompt;
pub mod sample;
pub mod selector;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
