//! Jointly trained selector and predictor under the supervision of a frozen
//! full-image detector, with synthetic benchmarks carrying exact
//! ground-truth masks and the localisation/fidelity metrics to score them.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod image;
pub mod masking;
pub mod metrics;
pub mod nets;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
