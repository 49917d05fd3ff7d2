//! Single-stage detection loss.
//!
//! Each ground-truth box is assigned to the grid cell containing its centre and
//! to the anchor whose shape overlaps it best. The loss is the sum of
//!
//! * objectness binary cross-entropy over every cell and anchor,
//! * class cross-entropy on assigned cells,
//! * smooth-L1 on the box parameters of assigned cells.
//!
//! Box centres are regressed in logit space (`t = logit(offset)`, decoded with
//! a sigmoid) and sizes as `ln(size / anchor)`.

use serde::{Deserialize, Serialize};

use super::DetectorConfig;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::{GradTape, ParamId, Tensor, Var};

/// One labelled box on the key frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub bbox: BBox,
    pub class: usize,
}

/// Loss targets laid out against the flat head output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedTargets {
    pub objectness: Vec<f32>,
    obj_idx: Vec<u32>,
    box_idx: Vec<u32>,
    box_t: Vec<f32>,
    cls_idx: Vec<u32>,
    cls_t: Vec<usize>,
    classes: usize,
}

impl EncodedTargets {
    pub fn positives(&self) -> usize {
        self.cls_t.len()
    }
}

const OFFSET_CLAMP: f32 = 0.02;

fn logit(p: f32) -> f32 {
    let p = p.clamp(OFFSET_CLAMP, 1.0 - OFFSET_CLAMP);
    (p / (1.0 - p)).ln()
}

fn shape_iou(a: (f32, f32), b: (f32, f32)) -> f32 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// Grid cell and anchor a box is assigned to: `(anchor, row, col)`.
pub fn assign(cfg: &DetectorConfig, b: &BBox) -> (usize, usize, usize) {
    let (gh, gw) = cfg.out_grid();
    let (cx, cy) = b.center();
    let col = ((cx * gw as f64).floor() as usize).min(gw - 1);
    let row = ((cy * gh as f64).floor() as usize).min(gh - 1);
    let size = (b.width() as f32, b.height() as f32);
    let anchor = (0..cfg.anchors.len())
        .max_by(|&i, &j| {
            shape_iou(size, cfg.anchors[i])
                .partial_cmp(&shape_iou(size, cfg.anchors[j]))
                .unwrap()
                .then(j.cmp(&i))
        })
        .expect("at least one anchor");
    (anchor, row, col)
}

/// Lay out targets against the head output. When two boxes land on the same
/// cell and anchor, the first one is kept.
pub fn encode_targets(cfg: &DetectorConfig, targets: &[Target]) -> Result<EncodedTargets> {
    let (gh, gw) = cfg.out_grid();
    let plane = gh * gw;
    let slot = cfg.slot();
    let na = cfg.anchors.len();
    let mut enc = EncodedTargets {
        objectness: vec![0.0; na * plane],
        obj_idx: (0..na)
            .flat_map(|a| (0..plane).map(move |p| ((a * slot + 4) * plane + p) as u32))
            .collect(),
        classes: cfg.classes,
        ..Default::default()
    };
    for t in targets {
        t.bbox.validate()?;
        if t.class >= cfg.classes {
            return Err(Error::InvalidArgument(format!(
                "target class {} outside 0..{}",
                t.class, cfg.classes
            )));
        }
        let (a, row, col) = assign(cfg, &t.bbox);
        let cell = row * gw + col;
        if enc.objectness[a * plane + cell] == 1.0 {
            continue;
        }
        enc.objectness[a * plane + cell] = 1.0;
        let (cx, cy) = t.bbox.center();
        let (aw, ah) = cfg.anchors[a];
        let ch = |f: usize| ((a * slot + f) * plane + cell) as u32;
        enc.box_idx.extend([ch(0), ch(1), ch(2), ch(3)]);
        enc.box_t.extend([
            logit((cx * gw as f64 - col as f64) as f32),
            logit((cy * gh as f64 - row as f64) as f32),
            (t.bbox.width() as f32 / aw).ln(),
            (t.bbox.height() as f32 / ah).ln(),
        ]);
        enc.cls_idx.extend((0..cfg.classes).map(|k| ch(5 + k)));
        enc.cls_t.push(t.class);
    }
    Ok(enc)
}

/// Record the loss on `tape` for head output `pred`.
pub fn detection_loss(tape: &mut GradTape, pred: Var, enc: &EncodedTargets) -> Result<Var> {
    let obj = tape.gather(pred, enc.obj_idx.clone())?;
    let mut loss = tape.bce_logits(obj, enc.objectness.clone())?;
    if !enc.cls_t.is_empty() {
        let boxes = tape.gather(pred, enc.box_idx.clone())?;
        let l_box = tape.smooth_l1(boxes, enc.box_t.clone())?;
        let logits = tape.gather(pred, enc.cls_idx.clone())?;
        let l_cls = tape.softmax_ce(logits, enc.classes, enc.cls_t.clone())?;
        loss = tape.add(loss, l_box)?;
        loss = tape.add(loss, l_cls)?;
    }
    Ok(loss)
}

/// Loss value of a fixed prediction tensor.
pub fn loss_value(pred: &Tensor, enc: &EncodedTargets) -> Result<f32> {
    let mut tape = GradTape::new();
    let p = tape.param(ParamId(0), pred.clone());
    let l = detection_loss(&mut tape, p, enc)?;
    Ok(tape.value(l).data()[0])
}
