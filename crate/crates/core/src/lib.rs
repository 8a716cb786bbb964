//! Document-level cross-checking of numerical facts across tables.
//!
//! Mentions are extracted from parsed documents, embedded, paired by cosine
//! similarity, classified as equivalent or not, and compared numerically.
//! Equivalent pairs with different values are reported as inconsistencies.

pub mod cipe;
pub mod classifier;
pub mod cnap;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod document;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod filter;
pub mod hnsw;
pub mod matrix;
pub mod pipeline;
pub mod tokenizer;
pub mod value;

pub use error::{Error, Result, Stage};
pub use value::{normalize_value, NumericValue};
