//! Explainable drought-stress classification of aerial crop imagery.
//!
//! The pipeline turns box-annotated scenes into labeled patches
//! ([`ingest`]), streams augmented batches ([`augment`]), trains a
//! transfer-learning classifier ([`model`], [`train`]), scores it with
//! confusion-matrix metrics ([`evaluate`]) and explains single predictions
//! with input-gradient heatmaps ([`explain`]). [`synth`] generates separable
//! synthetic corpora and finite-difference oracles for testing.

pub mod augment;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod ingest;
pub mod label;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use label::Label;
