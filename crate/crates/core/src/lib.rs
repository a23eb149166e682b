//! Multimodal recommendation benchmark harness.
//!
//! Trains classical and content-aware recommenders on implicit feedback plus item
//! feature tables (extractor embeddings, noise baselines, keyword attributes), scores
//! full top-K rankings and aggregates results with significance tests and Borda counts.

mod binio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod factor;
pub mod features;
pub mod graph;
pub mod keywords;
pub mod knn;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
