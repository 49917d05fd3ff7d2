use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{predict, Detector, DetectorConfig};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::postprocess::{postprocess_frame, postprocess_sequence, ActionTube, PostprocessSettings};
use crate::tensor::{sigmoid, Tensor};

/// One box on one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BBox,
    pub label: usize,
    pub confidence: f64,
}

/// Box size exponent limits; keeps decoded widths inside the frame.
const TW_MIN: f32 = -6.0;
const TW_MAX: f32 = 3.0;

/// Decode raw head output into every candidate box with confidence ≥ `min_conf`.
///
/// Centre: `(cell + σ(t)) / grid`; size: `anchor · exp(t)`; confidence:
/// `σ(objectness) · max softmax(class logits)`.
pub fn decode(cfg: &DetectorConfig, pred: &Tensor, frame: usize, min_conf: f64) -> Result<Vec<Detection>> {
    let (gh, gw) = cfg.out_grid();
    if pred.shape() != [cfg.head_channels(), gh, gw] {
        return Err(Error::shape(
            "decode",
            format!("prediction {:?} vs expected {:?}", pred.shape(), [cfg.head_channels(), gh, gw]),
        ));
    }
    let plane = gh * gw;
    let p = pred.data();
    let mut out = Vec::new();
    for (a, &(aw, ah)) in cfg.anchors.iter().enumerate() {
        let ch = |f: usize, cell: usize| p[(a * cfg.slot() + f) * plane + cell];
        for row in 0..gh {
            for col in 0..gw {
                let cell = row * gw + col;
                let obj = f64::from(sigmoid(ch(4, cell)));
                if obj < min_conf {
                    continue;
                }
                let logits: Vec<f32> = (0..cfg.classes).map(|k| ch(5 + k, cell)).collect();
                let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let z: f64 = logits.iter().map(|&v| f64::from(v - m).exp()).sum();
                let label = logits
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, &v)| if v > logits[best] { k } else { best });
                let confidence = obj / z;
                if confidence < min_conf {
                    continue;
                }
                let cx = (col as f64 + f64::from(sigmoid(ch(0, cell)))) / gw as f64;
                let cy = (row as f64 + f64::from(sigmoid(ch(1, cell)))) / gh as f64;
                let w = f64::from(aw) * f64::from(ch(2, cell).clamp(TW_MIN, TW_MAX)).exp();
                let h = f64::from(ah) * f64::from(ch(3, cell).clamp(TW_MIN, TW_MAX)).exp();
                out.push(Detection {
                    frame,
                    bbox: BBox::from_center(cx, cy, w, h.min(1.0)),
                    label,
                    confidence,
                });
            }
        }
    }
    Ok(out)
}

/// Per-frame wall-clock statistics in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyReport {
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        if samples_ms.is_empty() {
            return Self::default();
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        LatencyReport {
            frames: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            median_ms: q(0.5),
            p95_ms: q(0.95),
        }
    }
}

/// Detections on the key frame of one clip: decode, threshold, suppress.
pub fn infer_clip(model: &Detector, clip: &Tensor, frame: usize, s: &PostprocessSettings) -> Result<Vec<Detection>> {
    let pred = predict(model, clip)?;
    postprocess_frame(&decode(model.config(), &pred, frame, s.tau)?, s)
}

/// Result of running the detector over a sequence of clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    pub detections: Vec<Detection>,
    pub tubes: Vec<ActionTube>,
    pub latency: LatencyReport,
}

/// Run every clip (tagged with its key-frame index) through `run`, then link
/// and smooth across frames. Latency covers the forward pass, decoding and
/// per-frame suppression.
pub fn infer_sequence_with<F>(clips: &[(usize, Tensor)], s: &PostprocessSettings, mut run: F) -> Result<InferenceOutput>
where
    F: FnMut(&Tensor, usize) -> Result<Vec<Detection>>,
{
    s.validate()?;
    let mut per_frame = Vec::new();
    let mut times = Vec::with_capacity(clips.len());
    for (frame, clip) in clips {
        let t0 = Instant::now();
        let dets = run(clip, *frame)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        per_frame.extend(dets);
    }
    let (tubes, detections) = postprocess_sequence(&per_frame, s)?;
    Ok(InferenceOutput {
        detections,
        tubes,
        latency: LatencyReport::from_samples(&times),
    })
}

/// [`infer_sequence_with`] using the float model.
pub fn infer_sequence(model: &Detector, clips: &[(usize, Tensor)], s: &PostprocessSettings) -> Result<InferenceOutput> {
    infer_sequence_with(clips, s, |clip, frame| infer_clip(model, clip, frame, s))
}
