//! Three-stream sequence classification with attentive modality hopping:
//! per-modality GRU encoders, iterative bilinear attention that re-summarizes
//! one stream conditioned on the other two, and a cross-validated training
//! harness. Everything runs on a small f64 reverse-mode autodiff tape.

pub mod amh;
pub mod data;
pub mod encoder;
pub mod error;
pub mod model;
pub mod parallel;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
