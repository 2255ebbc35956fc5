//! Training composite-error recognizers from single-class supervision by
//! combining clip features of different classes during training.

pub mod dataset;
pub mod error;
pub mod fusion;
pub mod label_space;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod selftest;
pub mod synth;

pub use error::{Error, Result};
