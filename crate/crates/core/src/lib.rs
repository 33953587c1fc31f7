//! Knowledge-graph guided aspect extraction: corpus handling, domain graph
//! construction, pivot injection, a from-scratch tagging encoder and
//! evaluation.

pub mod annotate;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod inject;
pub mod kg;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub mod synth;
pub mod experiment;
