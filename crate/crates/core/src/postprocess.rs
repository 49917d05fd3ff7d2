//! Confidence thresholding, wrap-aware non-maximum suppression, tube linking
//! and temporal smoothing of detections.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use crate::bbox::wrap_iou;
use crate::bbox::BBox;
use crate::detector::Detection;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSettings {
    /// Minimum confidence kept.
    pub tau: f64,
    /// Suppress boxes overlapping a better one by more than this.
    pub nms_iou: f64,
    /// Minimum overlap for extending a tube into the next frame.
    pub link_iou: f64,
    /// Smoothing window (odd).
    pub window: usize,
}

impl Default for PostprocessSettings {
    fn default() -> Self {
        PostprocessSettings {
            tau: 0.25,
            nms_iou: 0.5,
            link_iou: 0.3,
            window: 5,
        }
    }
}

impl PostprocessSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        for (name, v) in [("nms_iou", self.nms_iou), ("link_iou", self.link_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        check_window(self.window)
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("smoothing window must be odd and >= 1, got {window}")));
    }
    Ok(())
}

/// Detections with confidence ≥ `tau`, order preserved.
pub fn confidence_filter(dets: &[Detection], tau: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(dets.iter().filter(|d| d.confidence >= tau).copied().collect())
}

/// Suppression priority: higher confidence first, then smaller `x1`, then smaller `y1`.
pub fn priority(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy per-class suppression. The result is in priority order.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Result<Vec<Detection>> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(Error::InvalidArgument(format!("iou threshold must lie in (0, 1), got {iou_thr}")));
    }
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(priority);
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.label == d.label && k.frame == d.frame && wrap_iou(&k.bbox, &d.bbox) > iou_thr);
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeEntry {
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Temporally linked boxes of one action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTube {
    pub label: usize,
    pub entries: Vec<TubeEntry>,
}

impl ActionTube {
    /// Mean member confidence.
    pub fn confidence(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.confidence).sum::<f64>() / self.entries.len() as f64
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.entries.first().map(|e| e.frame)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.entries.last().map(|e| e.frame)
    }

    pub fn detections(&self) -> impl Iterator<Item = Detection> + '_ {
        self.entries.iter().map(|e| Detection {
            frame: e.frame,
            bbox: e.bbox,
            label: self.label,
            confidence: e.confidence,
        })
    }
}

/// Greedy frame-to-frame linking.
///
/// Frames are visited in increasing order. A tube can be extended only from
/// the previous visited frame; candidate pairs with `wrap_iou ≥ link_iou` are
/// matched best-first (ties: earlier tube, then earlier detection). Unmatched
/// detections open new tubes. Labels are linked independently.
pub fn link_tubes(dets: &[Detection], link_iou: f64) -> Result<Vec<ActionTube>> {
    if !(link_iou > 0.0 && link_iou < 1.0) {
        return Err(Error::InvalidArgument(format!("link_iou must lie in (0, 1), got {link_iou}")));
    }
    let mut frames: Vec<usize> = dets.iter().map(|d| d.frame).collect();
    frames.sort_unstable();
    frames.dedup();

    let mut tubes: Vec<ActionTube> = Vec::new();
    let mut prev_frame: Option<usize> = None;
    for &f in &frames {
        let mut current: Vec<&Detection> = dets.iter().filter(|d| d.frame == f).collect();
        current.sort_by(|a, b| priority(a, b));
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in tubes.iter().enumerate() {
            let last = t.entries.last().expect("tubes are never empty");
            if Some(last.frame) != prev_frame {
                continue;
            }
            for (di, d) in current.iter().enumerate() {
                if d.label != t.label {
                    continue;
                }
                let iou = wrap_iou(&last.bbox, &d.bbox);
                if iou >= link_iou {
                    pairs.push((iou, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut tube_used = vec![false; tubes.len()];
        let mut det_used = vec![false; current.len()];
        for (_, ti, di) in pairs {
            if tube_used[ti] || det_used[di] {
                continue;
            }
            tube_used[ti] = true;
            det_used[di] = true;
            let d = current[di];
            tubes[ti].entries.push(TubeEntry {
                frame: f,
                bbox: d.bbox,
                confidence: d.confidence,
            });
        }
        for (di, d) in current.iter().enumerate() {
            if !det_used[di] {
                tubes.push(ActionTube {
                    label: d.label,
                    entries: vec![TubeEntry {
                        frame: f,
                        bbox: d.bbox,
                        confidence: d.confidence,
                    }],
                });
            }
        }
        prev_frame = Some(f);
    }
    Ok(tubes)
}

/// Centred moving average of `values`, truncated at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let r = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Smooth confidences and boxes along a tube. Horizontal positions are
/// unrolled across the seam before averaging and wrapped back afterwards.
pub fn temporal_smooth(tube: &ActionTube, window: usize) -> Result<ActionTube> {
    check_window(window)?;
    if window == 1 || tube.entries.len() < 2 {
        return Ok(tube.clone());
    }
    let mut x1: Vec<f64> = Vec::with_capacity(tube.entries.len());
    for e in &tube.entries {
        let x = match x1.last() {
            None => e.bbox.x1,
            Some(&prev) => {
                let d = (e.bbox.x1 - prev + 0.5).rem_euclid(1.0) - 0.5;
                prev + d
            }
        };
        x1.push(x);
    }
    let col = |f: fn(&TubeEntry) -> f64| moving_average(&tube.entries.iter().map(f).collect::<Vec<_>>(), window);
    let conf = col(|e| e.confidence);
    let width = col(|e| e.bbox.width());
    let y1 = col(|e| e.bbox.y1);
    let y2 = col(|e| e.bbox.y2);
    let x1 = moving_average(&x1, window);
    let entries = tube
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let start = x1[i].rem_euclid(1.0);
            let end = start + width[i];
            TubeEntry {
                frame: e.frame,
                bbox: BBox {
                    x1: start,
                    y1: y1[i],
                    x2: if end > 1.0 { end - 1.0 } else { end },
                    y2: y2[i],
                },
                confidence: conf[i],
            }
        })
        .collect();
    Ok(ActionTube {
        label: tube.label,
        entries,
    })
}

/// Threshold and suppress the detections of one frame.
pub fn postprocess_frame(dets: &[Detection], s: &PostprocessSettings) -> Result<Vec<Detection>> {
    s.validate()?;
    nms(&confidence_filter(dets, s.tau)?, s.nms_iou)
}

/// Full pipeline over a sequence of frames: threshold and suppress per frame,
/// link into tubes, smooth each tube. Returns the tubes and their members as
/// flat detections sorted by frame.
pub fn postprocess_sequence(dets: &[Detection], s: &PostprocessSettings) -> Result<(Vec<ActionTube>, Vec<Detection>)> {
    s.validate()?;
    let mut frames: Vec<usize> = dets.iter().map(|d| d.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut kept = Vec::new();
    for f in frames {
        let frame_dets: Vec<Detection> = dets.iter().filter(|d| d.frame == f).copied().collect();
        kept.extend(postprocess_frame(&frame_dets, s)?);
    }
    let tubes = link_tubes(&kept, s.link_iou)?
        .iter()
        .map(|t| temporal_smooth(t, s.window))
        .collect::<Result<Vec<_>>>()?;
    let mut flat: Vec<Detection> = tubes.iter().flat_map(|t| t.detections()).collect();
    flat.sort_by(|a, b| a.frame.cmp(&b.frame).then(priority(a, b)));
    Ok((tubes, flat))
}
