use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::pipeline::{optimize_model, OptimizeConfig};
use super::qmodel::{qforward, QuantizedModel};
use crate::dataset::{key_frame_truth, KeyFrame};
use crate::detector::{decode, infer_sequence_with, predict, Detection, Detector, DetectorConfig, ModelCheckpoint, Sample};
use crate::error::{Error, Result};
use crate::eval::{frame_map, tubes_from_boxes, video_map, EvalConfig, PredBox, PredTube};
use crate::postprocess::{link_tubes, postprocess_frame, PostprocessSettings};
use crate::tensor::Tensor;

/// A float or quantized detector behind one interface.
#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    Float(&'a Detector),
    Quantized(&'a QuantizedModel),
}

impl Model<'_> {
    pub fn config(&self) -> &DetectorConfig {
        match self {
            Model::Float(m) => m.config(),
            Model::Quantized(q) => q.shadow().config(),
        }
    }

    /// Raw head output for one clip.
    pub fn predict(&self, clip: &Tensor) -> Result<Tensor> {
        match self {
            Model::Float(m) => predict(m, clip),
            Model::Quantized(q) => qforward(q, clip),
        }
    }

    /// Key-frame detections: every decoded box at or above `min_conf`
    /// (`post` off), or thresholded and suppressed with `s` (`post` on).
    pub fn detect(&self, clip: &Tensor, frame: usize, s: &PostprocessSettings, post: bool, min_conf: f64) -> Result<Vec<Detection>> {
        let pred = self.predict(clip)?;
        if post {
            postprocess_frame(&decode(self.config(), &pred, frame, s.tau)?, s)
        } else {
            decode(self.config(), &pred, frame, min_conf)
        }
    }
}

/// Predictions of one variant over a key-frame set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub boxes: Vec<PredBox>,
    pub tubes: Vec<PredTube>,
}

/// Run `model` over every key frame, video by video. With `post`, detections
/// are thresholded, suppressed, linked into tubes and smoothed; without it
/// every box above `min_conf` is kept and tubes are linked unsmoothed.
pub fn predict_keys(model: Model<'_>, keys: &[KeyFrame], s: &PostprocessSettings, post: bool, min_conf: f64) -> Result<Predictions> {
    let mut out = Predictions::default();
    let mut start = 0;
    while start < keys.len() {
        let video = &keys[start].video;
        let end = start + keys[start..].iter().take_while(|k| k.video == *video).count();
        let clips: Vec<(usize, Tensor)> = keys[start..end].iter().map(|k| (k.frame, k.sample.clip.clone())).collect();
        let (dets, tubes) = if post {
            let r = infer_sequence_with(&clips, s, |clip, frame| model.detect(clip, frame, s, true, min_conf))?;
            (r.detections, r.tubes)
        } else {
            let mut dets = Vec::new();
            for (frame, clip) in &clips {
                dets.extend(model.detect(clip, *frame, s, false, min_conf)?);
            }
            let tubes = link_tubes(&dets, s.link_iou)?;
            (dets, tubes)
        };
        out.boxes.extend(dets.iter().map(|d| PredBox {
            video: video.clone(),
            frame: d.frame,
            label: d.label,
            bbox: d.bbox,
            confidence: d.confidence,
        }));
        out.tubes.extend(tubes.iter().map(|t| PredTube::from_action_tube(video, t)));
        start = end;
    }
    Ok(out)
}

/// Frame- and video-level mAP of predictions against key-frame ground truth.
pub fn score(pred: &Predictions, keys: &[KeyFrame], cfg: &EvalConfig) -> Result<(Option<f64>, Option<f64>)> {
    let gt = key_frame_truth(keys);
    let fm = frame_map(&pred.boxes, &gt, cfg)?.map;
    let vm = video_map(&pred.tubes, &tubes_from_boxes(&gt), cfg)?.map;
    Ok((fm, vm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub optimize: OptimizeConfig,
    pub postprocess: PostprocessSettings,
    /// Confidence floor of the unprocessed baseline.
    pub baseline_min_conf: f64,
    /// Minimum number of timed frames per variant.
    pub timing_frames: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            optimize: OptimizeConfig::default(),
            postprocess: PostprocessSettings::default(),
            baseline_min_conf: 0.01,
            timing_frames: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    /// `None` when the evaluation set has no ground truth.
    pub frame_map: Option<f64>,
    pub video_map: Option<f64>,
    /// Median per-frame latency: forward pass, decoding and, for the
    /// post-processed variants, thresholding and suppression.
    pub ms_per_frame: f64,
    /// Serialized checkpoint size.
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub timed_frames: usize,
    pub eval_frames: usize,
}

pub const VARIANTS: [&str; 4] = ["baseline", "+NTC", "+NTCQ", "+NTCQP"];

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

impl BenchReport {
    pub fn row(&self, variant: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:>10} {:>10} {:>10} {:>10}\n",
            "variant", "frame mAP", "video mAP", "ms/frame", "bytes"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>10} {:>10.3} {:>10}",
                r.variant,
                cell(r.frame_map),
                cell(r.video_map),
                r.ms_per_frame,
                r.bytes
            );
        }
        let _ = writeln!(s, "({} evaluated key frames, {} timed frames per variant)", self.eval_frames, self.timed_frames);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,frame_map,video_map,ms_per_frame,bytes\n");
        let c = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{}", r.variant, c(r.frame_map), c(r.video_map), r.ms_per_frame, r.bytes);
        }
        s
    }
}

/// The comparison and the optimized models it built.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub quantized: QuantizedModel,
    pub pruned_quantized: QuantizedModel,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Evaluate the trained model as-is (baseline), with post-processing (+NTC),
/// quantized (+NTCQ) and pruned then quantized (+NTCQP).
///
/// Latency is timed in interleaved rounds (one frame of each variant per
/// round) over at least `timing_frames` frames, cycling through the
/// evaluation clips, so that slow drifts in machine load affect all
/// variants alike.
pub fn bench(
    ck: &ModelCheckpoint,
    train: &[Sample],
    val: &[Sample],
    calibration: &[Tensor],
    test: &[KeyFrame],
    eval: &EvalConfig,
    cfg: &BenchConfig,
) -> Result<BenchOutcome> {
    cfg.postprocess.validate()?;
    if !(0.0..=1.0).contains(&cfg.baseline_min_conf) {
        return Err(Error::InvalidArgument("baseline_min_conf must lie in [0, 1]".into()));
    }
    let (quantized, _) = optimize_model(ck, &cfg.optimize.quantize_only(), train, val, calibration)?;
    let (pruned_quantized, _) = optimize_model(ck, &cfg.optimize, train, val, calibration)?;
    let models = [
        Model::Float(&ck.model),
        Model::Float(&ck.model),
        Model::Quantized(&quantized),
        Model::Quantized(&pruned_quantized),
    ];
    let post = [false, true, true, true];
    let float_bytes = ck.serialized_size()?;
    let bytes = [
        float_bytes,
        float_bytes,
        quantized.serialized_size()?,
        pruned_quantized.serialized_size()?,
    ];

    let mut scores = Vec::with_capacity(4);
    for v in 0..4 {
        let p = predict_keys(models[v], test, &cfg.postprocess, post[v], cfg.baseline_min_conf)?;
        scores.push(score(&p, test, eval)?);
    }

    let mut times: [Vec<f64>; 4] = Default::default();
    let timed = if test.is_empty() { 0 } else { cfg.timing_frames.max(1) };
    for i in 0..timed {
        let k = &test[i % test.len()];
        for v in 0..4 {
            let t0 = Instant::now();
            let d = models[v].detect(&k.sample.clip, k.frame, &cfg.postprocess, post[v], cfg.baseline_min_conf)?;
            times[v].push(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(d);
        }
    }

    let rows = (0..4)
        .map(|v| BenchRow {
            variant: VARIANTS[v].to_string(),
            frame_map: scores[v].0,
            video_map: scores[v].1,
            ms_per_frame: median(&mut times[v]),
            bytes: bytes[v],
        })
        .collect();
    Ok(BenchOutcome {
        report: BenchReport {
            rows,
            timed_frames: timed,
            eval_frames: test.len(),
        },
        quantized,
        pruned_quantized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::key_frames;
    use crate::detector::TrainReport;
    use crate::optimize::{FinetuneConfig, PruneConfig};
    use crate::synth::{gen_synthetic, SynthConfig};

    fn small_detector() -> DetectorConfig {
        DetectorConfig {
            clip_len: 2,
            height: 16,
            width: 32,
            c1: 4,
            c2: 8,
            fused: 8,
            ..Default::default()
        }
    }

    #[test]
    fn four_rows_with_monotone_size() {
        let dcfg = small_detector();
        let data = gen_synthetic(
            &SynthConfig {
                videos: 3,
                frames: 3,
                height: 16,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let classes = data.config.classes.clone();
        let keys: Vec<KeyFrame> = data
            .videos
            .iter()
            .flat_map(|v| key_frames(v, &classes, dcfg.clip_len, 1).unwrap())
            .collect();
        let samples: Vec<Sample> = keys.iter().map(|k| k.sample.clone()).collect();
        let ck = ModelCheckpoint {
            model: Detector::new(dcfg).unwrap(),
            report: TrainReport::default(),
        };
        let calib: Vec<Tensor> = samples.iter().map(|s| s.clip.clone()).collect();
        let cfg = BenchConfig {
            optimize: OptimizeConfig {
                prune: PruneConfig {
                    iterations: 2,
                    finetune: FinetuneConfig {
                        epochs: 1,
                        ..Default::default()
                    },
                    ..Default::default()
                },
                ..Default::default()
            },
            timing_frames: 8,
            ..Default::default()
        };
        let eval = EvalConfig {
            classes,
            ..Default::default()
        };
        let out = bench(&ck, &samples, &[], &calib, &keys, &eval, &cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), VARIANTS);
        for w in r.rows.windows(2) {
            assert!(w[1].bytes <= w[0].bytes, "{}", r.to_text());
        }
        assert!(r.rows.iter().all(|row| row.frame_map.is_some() && row.ms_per_frame > 0.0));
        assert_eq!(out.pruned_quantized.meta.prune_iterations, 2);
        assert_eq!(r.to_csv().lines().count(), 5);

        let empty = bench(&ck, &samples, &[], &calib, &[], &eval, &cfg).unwrap().report;
        assert!(empty.rows.iter().all(|r| r.frame_map.is_none()));
    }

    #[test]
    fn ground_truth_as_predictions_scores_one() {
        let data = gen_synthetic(
            &SynthConfig {
                videos: 2,
                frames: 4,
                height: 16,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let classes = data.config.classes.clone();
        let keys: Vec<KeyFrame> = data.videos.iter().flat_map(|v| key_frames(v, &classes, 2, 1).unwrap()).collect();
        let gt = key_frame_truth(&keys);
        let pred = Predictions {
            boxes: gt
                .iter()
                .map(|g| PredBox {
                    video: g.video.clone(),
                    frame: g.frame,
                    label: g.label,
                    bbox: g.bbox,
                    confidence: 1.0,
                })
                .collect(),
            tubes: tubes_from_boxes(&gt)
                .into_iter()
                .map(|t| PredTube {
                    video: t.video,
                    label: t.label,
                    confidence: 1.0,
                    boxes: t.boxes,
                })
                .collect(),
        };
        let eval = EvalConfig {
            classes,
            ..Default::default()
        };
        assert_eq!(score(&pred, &keys, &eval).unwrap(), (Some(1.0), Some(1.0)));
    }
}
