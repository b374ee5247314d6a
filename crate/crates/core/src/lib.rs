//! Benchmark for post-hoc attribution methods on time-series classifiers.
//!
//! The crate generates the chaotic-attractor dataset family, trains small
//! reference classifiers (or talks to external ones over a line protocol),
//! computes relevance maps with black-box and gradient attribution methods
//! and scores them with occlusion-based faithfulness metrics.

pub mod attractor;
pub mod attribution;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod report;
pub mod rng;
pub mod store;

pub use dataset::{Dataset, DatasetMeta, SplitAssignment, SplitName};
pub use error::{Error, Result};
