//! Dataset splits and accuracy metrics: frame-level AP/mAP, tube-level
//! (video) mAP and per-action / per-condition breakdowns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bbox::{wrap_intersection, wrap_iou, BBox};
use crate::error::{Error, Result};
use crate::postprocess::ActionTube;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Box IoU needed for a frame-level match.
    pub iou: f64,
    /// Tube IoU needed for a video-level match.
    pub tube_iou: f64,
    /// Class names, indexed by label id.
    pub classes: Vec<String>,
    /// Train / validation / test fractions.
    pub ratios: [f64; 3],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou: 0.5,
            tube_iou: 0.5,
            classes: Vec::new(),
            ratios: [0.7, 0.15, 0.15],
        }
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {r:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("iou", self.iou), ("tube_iou", self.tube_iou)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} threshold {t} must lie in (0, 1)")));
            }
        }
        check_ratios(&self.ratios)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle the (sorted, de-duplicated) ids with `seed` and cut them into
/// train / validation / test. Validation and test sizes are the rounded
/// ratios; train takes the remainder.
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Split> {
    check_ratios(&ratios)?;
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    let n = ids.len();
    ids.dedup();
    if ids.len() != n {
        return Err(Error::InvalidArgument("video ids must be unique".into()));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 videos to split, got {n}")));
    }
    Rng::stream(seed, "eval.split").shuffle(&mut ids);
    let n_val = (ratios[1] * n as f64).round() as usize;
    let n_test = (ratios[2] * n as f64).round() as usize;
    if n_val + n_test > n {
        return Err(Error::InvalidArgument("split ratios leave no room for training videos".into()));
    }
    let test = ids.split_off(n - n_test);
    let val = ids.split_off(n - n_test - n_val);
    Ok(Split { train: ids, val, test })
}

/// A ground-truth box on one frame of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub video: String,
    pub frame: usize,
    pub label: usize,
    pub bbox: BBox,
}

/// A scored prediction on one frame of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredBox {
    pub video: String,
    pub frame: usize,
    pub label: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub label: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub ground_truth: usize,
    pub predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub per_class: Vec<ClassAp>,
    /// Mean over classes with ground truth; `None` if there are none.
    pub map: Option<f64>,
}

/// All-point interpolated area under the precision/recall curve of a ranked
/// list of match flags against `n_gt` ground-truth items.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(tp.len());
    let mut rec = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        prec.push(hits as f64 / (i + 1) as f64);
        rec.push(hits as f64 / n_gt as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for i in 0..tp.len() {
        if tp[i] {
            ap += (rec[i] - last_recall) * prec[i];
            last_recall = rec[i];
        }
    }
    ap
}

fn check_labels(labels: impl Iterator<Item = usize>, classes: usize) -> Result<()> {
    for l in labels {
        if l >= classes {
            return Err(Error::OutOfRange(format!("label {l} with only {classes} classes")));
        }
    }
    Ok(())
}

/// Ranking order: confidence descending, then input order.
fn ranked<T>(items: &[T], conf: impl Fn(&T) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| conf(&items[b]).total_cmp(&conf(&items[a])).then(a.cmp(&b)));
    idx
}

fn summarise(per_class: Vec<ClassAp>) -> MapReport {
    let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    MapReport { per_class, map }
}

/// Frame-level AP per class. Predictions are taken in confidence order; each
/// is matched to the unmatched ground-truth box of the same class on the same
/// frame with the highest wrap-aware IoU, if that IoU reaches `cfg.iou`.
pub fn frame_map(preds: &[PredBox], gt: &[GtBox], cfg: &EvalConfig) -> Result<MapReport> {
    let k = cfg.classes.len();
    check_labels(preds.iter().map(|p| p.label).chain(gt.iter().map(|g| g.label)), k)?;
    let mut per_class = Vec::with_capacity(k);
    for label in 0..k {
        let cp: Vec<&PredBox> = preds.iter().filter(|p| p.label == label).collect();
        let mut pool: HashMap<(&str, usize), Vec<(&BBox, bool)>> = HashMap::new();
        let mut n_gt = 0;
        for g in gt.iter().filter(|g| g.label == label) {
            pool.entry((g.video.as_str(), g.frame)).or_default().push((&g.bbox, false));
            n_gt += 1;
        }
        let mut tp = Vec::with_capacity(cp.len());
        for i in ranked(&cp, |p| p.confidence) {
            let p = cp[i];
            let hit = pool.get_mut(&(p.video.as_str(), p.frame)).and_then(|cands| {
                let best = cands
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, used))| !used)
                    .map(|(j, (b, _))| (j, crate::bbox::wrap_iou(&p.bbox, b)))
                    .filter(|&(_, iou)| iou >= cfg.iou)
                    .fold(None::<(usize, f64)>, |acc, c| match acc {
                        Some(a) if a.1 >= c.1 => Some(a),
                        _ => Some(c),
                    })?;
                cands[best.0].1 = true;
                Some(())
            });
            tp.push(hit.is_some());
        }
        per_class.push(ClassAp {
            label,
            ap: (n_gt > 0).then(|| average_precision(&tp, n_gt)),
            ground_truth: n_gt,
            predictions: cp.len(),
        });
    }
    Ok(summarise(per_class))
}

/// A ground-truth action tube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtTube {
    pub video: String,
    pub label: usize,
    pub boxes: BTreeMap<usize, BBox>,
}

/// A scored predicted tube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredTube {
    pub video: String,
    pub label: usize,
    pub confidence: f64,
    pub boxes: BTreeMap<usize, BBox>,
}

impl PredTube {
    pub fn from_action_tube(video: &str, t: &ActionTube) -> Self {
        PredTube {
            video: video.to_string(),
            label: t.label,
            confidence: t.confidence(),
            boxes: t.entries.iter().map(|e| (e.frame, e.bbox)).collect(),
        }
    }
}

/// Spatio-temporal IoU: summed per-frame intersections over shared frames
/// divided by summed per-frame unions over all frames either tube covers; a
/// frame covered by one tube only contributes that box's area.
pub fn tube_iou(a: &BTreeMap<usize, BBox>, b: &BTreeMap<usize, BBox>) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (f, ba) in a {
        match b.get(f) {
            Some(bb) => {
                let i = wrap_intersection(ba, bb);
                inter += i;
                union += ba.area() + bb.area() - i;
            }
            None => union += ba.area(),
        }
    }
    for (f, bb) in b {
        if !a.contains_key(f) {
            union += bb.area();
        }
    }
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Video-level AP per class over tubes, with the same greedy matching as
/// [`frame_map`] keyed by video and thresholded at `cfg.tube_iou`.
pub fn video_map(preds: &[PredTube], gt: &[GtTube], cfg: &EvalConfig) -> Result<MapReport> {
    let k = cfg.classes.len();
    check_labels(preds.iter().map(|p| p.label).chain(gt.iter().map(|g| g.label)), k)?;
    let mut per_class = Vec::with_capacity(k);
    for label in 0..k {
        let cp: Vec<&PredTube> = preds.iter().filter(|p| p.label == label).collect();
        let mut pool: HashMap<&str, Vec<(&BTreeMap<usize, BBox>, bool)>> = HashMap::new();
        let mut n_gt = 0;
        for g in gt.iter().filter(|g| g.label == label) {
            pool.entry(g.video.as_str()).or_default().push((&g.boxes, false));
            n_gt += 1;
        }
        let mut tp = Vec::with_capacity(cp.len());
        for i in ranked(&cp, |p| p.confidence) {
            let p = cp[i];
            let mut hit = false;
            if let Some(cands) = pool.get_mut(p.video.as_str()) {
                let mut best: Option<(usize, f64)> = None;
                for (j, (boxes, used)) in cands.iter().enumerate() {
                    if *used {
                        continue;
                    }
                    let iou = tube_iou(&p.boxes, boxes);
                    if iou >= cfg.tube_iou && best.is_none_or(|b| iou > b.1) {
                        best = Some((j, iou));
                    }
                }
                if let Some((j, _)) = best {
                    cands[j].1 = true;
                    hit = true;
                }
            }
            tp.push(hit);
        }
        per_class.push(ClassAp {
            label,
            ap: (n_gt > 0).then(|| average_precision(&tp, n_gt)),
            ground_truth: n_gt,
            predictions: cp.len(),
        });
    }
    Ok(summarise(per_class))
}

/// One line of the metadata file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub condition: String,
    pub actions: Vec<String>,
}

/// Parse `video_id condition action[,action...]` lines; `#` starts a
/// comment line. Ids must be unique.
pub fn parse_metadata(text: &str) -> Result<Vec<VideoMeta>> {
    let mut out: Vec<VideoMeta> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| Error::Decode(format!("metadata line {}: {m}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (id, condition, actions) = match fields[..] {
            [id, cond] => (id, cond, ""),
            [id, cond, acts] => (id, cond, acts),
            _ => return Err(err("expected `video_id condition actions`")),
        };
        let actions: Vec<String> = actions
            .split(',')
            .filter(|a| !a.is_empty())
            .map(str::to_string)
            .collect();
        if !seen.insert(id.to_string()) {
            return Err(err(&format!("duplicate video id {id}")));
        }
        out.push(VideoMeta {
            id: id.into(),
            condition: condition.into(),
            actions,
        });
    }
    Ok(out)
}

pub fn render_metadata(videos: &[VideoMeta]) -> String {
    let mut s = String::new();
    for v in videos {
        let _ = writeln!(s, "{} {} {}", v.id, v.condition, v.actions.join(","));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: String,
    pub frame_ap: Option<f64>,
    pub video_ap: Option<f64>,
    pub ground_truth_boxes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub videos: usize,
    pub frame_map: Option<f64>,
    pub video_map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame: MapReport,
    pub video: MapReport,
    pub actions: Vec<ActionRow>,
    pub conditions: Vec<ConditionRow>,
}

/// Ground-truth tubes from per-frame boxes. Per video and label, frames are
/// visited in order and each box extends one of the tubes that reached the
/// previous frame, pairing by decreasing box IoU; unpaired boxes start new
/// tubes and a frame gap ends every tube.
pub fn tubes_from_boxes(gt: &[GtBox]) -> Vec<GtTube> {
    let mut groups: BTreeMap<(&str, usize), BTreeMap<usize, Vec<BBox>>> = BTreeMap::new();
    for g in gt {
        groups
            .entry((g.video.as_str(), g.label))
            .or_default()
            .entry(g.frame)
            .or_default()
            .push(g.bbox);
    }
    let mut out = Vec::new();
    for ((video, label), frames) in groups {
        let mut open: Vec<BTreeMap<usize, BBox>> = Vec::new();
        let mut prev: Option<usize> = None;
        for (f, boxes) in frames {
            if prev.is_some_and(|p| f != p + 1) {
                out.extend(open.drain(..).map(|b| GtTube {
                    video: video.into(),
                    label,
                    boxes: b,
                }));
            }
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (ti, t) in open.iter().enumerate() {
                let last = t.last_key_value().expect("tubes are never empty").1;
                pairs.extend(boxes.iter().enumerate().map(|(bi, b)| (wrap_iou(last, b), ti, bi)));
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let (mut tube_used, mut box_used) = (vec![false; open.len()], vec![false; boxes.len()]);
            let mut next = Vec::with_capacity(boxes.len());
            for (_, ti, bi) in pairs {
                if !tube_used[ti] && !box_used[bi] {
                    tube_used[ti] = true;
                    box_used[bi] = true;
                    let mut t = std::mem::take(&mut open[ti]);
                    t.insert(f, boxes[bi]);
                    next.push(t);
                }
            }
            for (ti, t) in open.into_iter().enumerate() {
                if !tube_used[ti] {
                    out.push(GtTube {
                        video: video.into(),
                        label,
                        boxes: t,
                    });
                }
            }
            next.extend(boxes.iter().zip(&box_used).filter(|(_, u)| !**u).map(|(b, _)| BTreeMap::from([(f, *b)])));
            open = next;
            prev = Some(f);
        }
        out.extend(open.into_iter().map(|b| GtTube {
            video: video.into(),
            label,
            boxes: b,
        }));
    }
    out
}

/// Overall, per-action and per-condition accuracy. Conditions without videos
/// are omitted.
pub fn report(
    preds: &[PredBox],
    pred_tubes: &[PredTube],
    gt: &[GtBox],
    meta: &[VideoMeta],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let gt_tubes = tubes_from_boxes(gt);
    let frame = frame_map(preds, gt, cfg)?;
    let video = video_map(pred_tubes, &gt_tubes, cfg)?;
    let actions = cfg
        .classes
        .iter()
        .enumerate()
        .map(|(i, name)| ActionRow {
            action: name.clone(),
            frame_ap: frame.per_class[i].ap,
            video_ap: video.per_class[i].ap,
            ground_truth_boxes: frame.per_class[i].ground_truth,
        })
        .collect();
    let mut by_cond: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for v in meta {
        by_cond.entry(v.condition.as_str()).or_default().insert(v.id.as_str());
    }
    let mut conditions = Vec::new();
    for (cond, ids) in by_cond {
        let p: Vec<PredBox> = preds.iter().filter(|p| ids.contains(p.video.as_str())).cloned().collect();
        let g: Vec<GtBox> = gt.iter().filter(|g| ids.contains(g.video.as_str())).cloned().collect();
        let pt: Vec<PredTube> = pred_tubes.iter().filter(|p| ids.contains(p.video.as_str())).cloned().collect();
        let gtt: Vec<GtTube> = gt_tubes.iter().filter(|g| ids.contains(g.video.as_str())).cloned().collect();
        conditions.push(ConditionRow {
            condition: cond.to_string(),
            videos: ids.len(),
            frame_map: frame_map(&p, &g, cfg)?.map,
            video_map: video_map(&pt, &gtt, cfg)?.map,
        });
    }
    Ok(EvalReport {
        frame,
        video,
        actions,
        conditions,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn text_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

impl EvalReport {
    /// `action,frame_ap,video_ap,ground_truth_boxes`; absent values are empty.
    pub fn actions_csv(&self) -> String {
        let mut s = String::from("action,frame_ap,video_ap,ground_truth_boxes\n");
        for r in &self.actions {
            let _ = writeln!(s, "{},{},{},{}", r.action, cell(r.frame_ap), cell(r.video_ap), r.ground_truth_boxes);
        }
        s
    }

    /// `condition,videos,frame_map,video_map`.
    pub fn conditions_csv(&self) -> String {
        let mut s = String::from("condition,videos,frame_map,video_map\n");
        for r in &self.conditions {
            let _ = writeln!(s, "{},{},{},{}", r.condition, r.videos, cell(r.frame_map), cell(r.video_map));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frame mAP {}   video mAP {}", text_cell(self.frame.map), text_cell(self.video.map));
        let _ = writeln!(s, "\n{:<24} {:>9} {:>9} {:>8}", "action", "frame AP", "video AP", "GT boxes");
        for r in &self.actions {
            let _ = writeln!(
                s,
                "{:<24} {:>9} {:>9} {:>8}",
                r.action,
                text_cell(r.frame_ap),
                text_cell(r.video_ap),
                r.ground_truth_boxes
            );
        }
        let _ = writeln!(s, "\n{:<24} {:>6} {:>9} {:>9}", "condition", "videos", "frame mAP", "video mAP");
        for r in &self.conditions {
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>9} {:>9}",
                r.condition,
                r.videos,
                text_cell(r.frame_map),
                text_cell(r.video_map)
            );
        }
        s
    }
}
