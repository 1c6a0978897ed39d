//! Stepwise extractive content planning.
//!
//! A scorer conditioned on an input (document sentences or box-score records)
//! and the previously selected plan picks the next content unit, one step at a
//! time. Two encoders are provided: a hierarchical sentence/document encoder
//! and a global-local sparse-attention encoder.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod plan;
pub mod rotowire;
pub mod selfcheck;
pub mod synthetic;
pub mod text;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
