//! Multitask self-distillation training kit for windowed accelerometer data.

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainers;

pub use error::{Error, Result};
