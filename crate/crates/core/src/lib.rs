//! Gap Filler: turns a checkpointed conditional generator into an optimized
//! synthetic training-data source and measures it by Classification
//! Accuracy Score (CAS) on real held-out data.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synthesis;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Dataset = data::Dataset<f64>;
pub type LabeledSample = data::LabeledSample<f64>;
pub type Classifier = models::Classifier<f64>;
pub type GeneratorCheckpoint = models::GeneratorCheckpoint<f64>;
