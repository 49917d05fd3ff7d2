//! Post-training INT8 quantization, iterative magnitude pruning and the
//! size/latency/accuracy comparison of model variants.

mod bench;
mod kernel;
mod pipeline;
mod policy;
mod prune;
mod qmodel;
mod quant;

pub use bench::{bench, predict_keys, score, BenchConfig, BenchOutcome, BenchReport, BenchRow, Model, Predictions, VARIANTS};
pub use pipeline::{optimize_model, OptimizeConfig};
pub use policy::{CategoryPolicy, OptimizationPolicy};
pub use prune::{prune_count, prune_iterative, prune_step, FinetuneConfig, PruneConfig, PruneMask, PruneOutcome};
pub use qmodel::{
    calibrate, qforward, quantize, Calibration, IntExec, IntLayer, OptimizeMeta, QuantizedModel, CALIBRATION_PERCENTILE,
    QUANTIZED_FORMAT,
};
pub use quant::{quantize_weights, ActQuant, ActivationRange, QuantizedWeights};
