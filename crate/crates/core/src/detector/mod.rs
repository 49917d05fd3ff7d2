//! Dual-stream clip detector: a 2D spatial branch on the key frame, a 3D
//! motion branch over the clip, channel fusion, latitude-aware attention and a
//! single-scale anchor head on a stride-4 grid.

mod checkpoint;
mod config;
mod infer;
mod loss;
mod model;
mod train;

pub use checkpoint::{FORMAT as CHECKPOINT_FORMAT, MANIFEST_FILE, TENSORS_FILE};
pub(crate) use checkpoint::{push_config, push_report, read_config, read_dir, read_report, write_dir};
pub use config::DetectorConfig;
pub use infer::{decode, infer_clip, infer_sequence, infer_sequence_with, Detection, InferenceOutput, LatencyReport};
pub use loss::{assign, detection_loss, encode_targets, loss_value, EncodedTargets, Target};
pub use model::{
    architecture, forward, predict, Category, ConvMode, Detector, Exec, FloatExec, Layer, TapeExec, ATTENTION, FUSION,
    HEAD, MOTION1, MOTION2, SPATIAL1, SPATIAL2, TEMPORAL,
};
pub(crate) use model::{float_attention, float_conv, relu};
pub use train::{fit, mean_loss, sample_gradients, train, Adam, ModelCheckpoint, Sample, TrainOptions, TrainReport, WeightMasks};
