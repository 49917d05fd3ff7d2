//! Average precision by re-scoring at every confidence threshold.

use crate::boxes::{iou, Rect};

#[derive(Clone, Debug, PartialEq)]
pub struct Pred {
    pub video: usize,
    pub frame: usize,
    pub label: usize,
    pub confidence: f64,
    pub bbox: Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gt {
    pub video: usize,
    pub frame: usize,
    pub label: usize,
    pub bbox: Rect,
}

/// True positives among `preds` (already in rank order): each takes the
/// unused ground truth of its frame and class with the largest IoU, the
/// earliest one on ties, if that IoU reaches `thr`.
fn true_positives(preds: &[&Pred], gt: &[&Gt], thr: f64) -> usize {
    let mut used = vec![false; gt.len()];
    let mut tp = 0;
    for p in preds {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] || g.video != p.video || g.frame != p.frame {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

/// All-point AP of one class: precision and recall are recomputed from
/// scratch for every cut-off of the confidence ranking, and each recall step
/// is weighted by the best precision at that recall or beyond.
pub fn class_ap(preds: &[Pred], gt: &[Gt], label: usize, thr: f64) -> Option<f64> {
    let gt: Vec<&Gt> = gt.iter().filter(|g| g.label == label).collect();
    if gt.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Pred> = preds.iter().filter(|p| p.label == label).collect();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let curve: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positives(&ranked[..k], &gt, thr) as f64;
            (tp / gt.len() as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (k, &(r, _)) in curve.iter().enumerate() {
        if r > prev {
            let p = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (r - prev) * p;
            prev = r;
        }
    }
    Some(ap)
}

/// Mean AP over classes `0..classes` that have ground truth.
pub fn mean_ap(preds: &[Pred], gt: &[Gt], classes: usize, thr: f64) -> Option<f64> {
    let aps: Vec<f64> = (0..classes).filter_map(|c| class_ap(preds, gt, c, thr)).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}
