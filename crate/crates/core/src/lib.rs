//! Action detection on equirectangular (360°) video.
//!
//! The crate covers the numerical core (tensors, a small gradient tape,
//! latitude-aware convolution and attention), a compact dual-stream detector,
//! post-processing on the periodic ERP frame, INT8 quantization and magnitude
//! pruning, annotation tooling, evaluation metrics and a synthetic data
//! generator.

pub mod annotate;
pub mod attention;
pub mod bbox;
pub mod dataset;
pub mod detector;
pub mod eac;
pub mod erp;
pub mod eval;
pub mod error;
pub mod manifest;
pub mod optimize;
pub mod postprocess;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
