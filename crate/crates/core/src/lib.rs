//! Hybrid-grained feature interaction selection for deep sparse networks.
//!
//! A deep sparse network embeds categorical fields, forms pairwise (or
//! higher-order) interactions between the field embeddings and feeds both to
//! an MLP. This crate learns which interactions to keep, either per field
//! tuple or per concrete value tuple, with a relaxed per-tuple choice between
//! the two. Gates come from low-rank decomposed networks evaluated per lookup,
//! are binarized with a straight-through estimator, and are searched with
//! alternating updates on validation and training batches before the model is
//! retrained with the frozen selection.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod par;
pub mod rng;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
