//! Response ranking for multi-turn information-seeking conversations.
//!
//! The crate implements deep matching networks over interaction matrices
//! between a dialog context and candidate responses, optionally enriched
//! with external knowledge: pseudo-relevance-feedback expansion of the
//! response (`Variant::Prf`) or a question/answer co-occurrence channel
//! (`Variant::Kd`). BM25 retrieval, dataset construction, pairwise training
//! and ranking metrics are included.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod model;
pub mod nn;
pub mod retrieval;
pub mod seed;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};
