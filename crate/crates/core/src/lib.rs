//! Federated learning with trainable per-unit pruning thresholds: clients
//! keep personalized sparse models and exchange only thresholds.

pub mod accounting;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod nn;
pub mod pgm;
pub mod pruning;
pub mod strategies;
pub mod tensor;

pub use error::{Result, SpaflError};
