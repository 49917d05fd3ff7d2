//! Annotation pipeline: propagate a manual start/end ROI across a clip,
//! CSV export/import, dataset validation and inter-annotator agreement.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bbox::{wrap_iou, BBox};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Header of the annotation CSV.
pub const CSV_HEADER: [&str; 9] = ["video_id", "action", "frame", "t_seconds", "x1", "y1", "x2", "y2", "wraps"];

/// Peak correlation below which the template search defers to interpolation.
pub const NCC_MIN_PEAK: f64 = 0.5;

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiFrame {
    pub frame: usize,
    pub t_seconds: f64,
    pub bbox: BBox,
}

/// One action instance: a contiguous run of boxed frames in one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiAnnotation {
    pub video_id: String,
    pub action: String,
    pub entries: Vec<RoiFrame>,
}

impl RoiAnnotation {
    /// Boxes for frames `first, first + 1, ...` timed at `frame / fps`, with
    /// every value rounded to the canonical six decimals.
    pub fn from_boxes(video_id: &str, action: &str, first: usize, fps: f64, boxes: &[BBox]) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps {fps} must be positive")));
        }
        let a = RoiAnnotation {
            video_id: video_id.into(),
            action: action.into(),
            entries: boxes
                .iter()
                .enumerate()
                .map(|(i, &bbox)| RoiFrame {
                    frame: first + i,
                    t_seconds: (first + i) as f64 / fps,
                    bbox,
                })
                .collect(),
        };
        Ok(a.canonical())
    }

    /// Same annotation with times and coordinates rounded to six decimals.
    pub fn canonical(mut self) -> Self {
        for e in &mut self.entries {
            e.t_seconds = round6(e.t_seconds);
            let b = &mut e.bbox;
            for v in [&mut b.x1, &mut b.y1, &mut b.x2, &mut b.y2] {
                *v = round6(*v);
            }
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackMethod {
    /// Corner interpolation in seam-unrolled coordinates.
    Interp,
    /// Normalised cross-correlation template search.
    Ncc,
}

impl std::str::FromStr for TrackMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interp" => Ok(TrackMethod::Interp),
            "ncc" => Ok(TrackMethod::Ncc),
            _ => Err(Error::InvalidArgument(format!("unknown tracking method {s:?} (interp|ncc)"))),
        }
    }
}

/// Signed shortest step from `a` to `b` on the unit circle.
fn circ_delta(a: f64, b: f64) -> f64 {
    (b - a + 0.5).rem_euclid(1.0) - 0.5
}

/// Box with left edge `x1` (any real, taken mod 1) and width `w`.
fn wrapped_box(x1: f64, w: f64, y1: f64, y2: f64) -> BBox {
    let x1 = x1.rem_euclid(1.0);
    let x2 = x1 + w;
    BBox {
        x1,
        y1,
        x2: if x2 > 1.0 { x2 - 1.0 } else { x2 },
        y2,
    }
}

fn interp_box(a: &BBox, b: &BBox, t: f64) -> BBox {
    let lerp = |p: f64, q: f64| p + t * (q - p);
    let x1 = a.x1 + t * circ_delta(a.x1, b.x1);
    wrapped_box(x1, lerp(a.width(), b.width()), lerp(a.y1, b.y1), lerp(a.y2, b.y2))
}

fn check_manual(b: &BBox) -> Result<()> {
    b.validate()?;
    if b.area() <= 0.0 {
        return Err(Error::InvalidArgument(format!("manual box {b:?} has zero area")));
    }
    Ok(())
}

/// Channel-mean grey image of a `[C, H, W]` or `[H, W]` frame.
fn grey(frame: &Tensor) -> Result<(usize, usize, Vec<f32>)> {
    match *frame.shape() {
        [h, w] => Ok((h, w, frame.data().to_vec())),
        [c, h, w] if c > 0 => {
            let mut g = vec![0.0f32; h * w];
            for ch in frame.data().chunks(h * w) {
                for (o, v) in g.iter_mut().zip(ch) {
                    *o += v / c as f32;
                }
            }
            Ok((h, w, g))
        }
        _ => Err(Error::shape("track_roi", format!("frames must be [C,H,W] or [H,W], got {:?}", frame.shape()))),
    }
}

/// Pixel rectangle `(x0, y0, w, h)` of a box; `x0` may wrap.
fn pixel_rect(b: &BBox, h: usize, w: usize) -> (isize, isize, usize, usize) {
    let x0 = (b.x1 * w as f64).round() as isize;
    let y0 = (b.y1 * h as f64).round() as isize;
    let pw = ((b.width() * w as f64).round() as usize).clamp(1, w);
    let ph = ((b.height() * h as f64).round() as usize).clamp(1, h);
    (x0, y0.clamp(0, (h - ph) as isize), pw, ph)
}

fn patch(img: &[f32], h: usize, w: usize, x0: isize, y0: isize, pw: usize, ph: usize, out: &mut Vec<f32>) {
    out.clear();
    for y in 0..ph {
        let row = (y0 + y as isize).clamp(0, h as isize - 1) as usize * w;
        for x in 0..pw {
            out.push(img[row + (x0 + x as isize).rem_euclid(w as isize) as usize]);
        }
    }
}

fn ncc(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x) - ma, f64::from(y) - mb);
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da <= 0.0 || db <= 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

/// Boxes for every frame of a clip between a manual first and last box.
///
/// `Interp` moves each corner linearly, taking the shorter way around the
/// seam. `Ncc` matches the start-frame template within a window around the
/// previous frame's box (wrapping horizontally); where the best correlation
/// is below [`NCC_MIN_PEAK`] the interpolated box is used. The box size
/// always follows the interpolation. The first and last boxes are returned
/// exactly as given.
pub fn track_roi(frames: &[Tensor], start: &BBox, end: &BBox, method: TrackMethod) -> Result<Vec<BBox>> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!("tracking needs at least 2 frames, got {}", frames.len())));
    }
    check_manual(start)?;
    check_manual(end)?;
    let n = frames.len();
    let interp: Vec<BBox> = (0..n).map(|i| interp_box(start, end, i as f64 / (n - 1) as f64)).collect();
    let mut out = interp.clone();
    if method == TrackMethod::Ncc && n > 2 {
        let (h, w, g0) = grey(&frames[0])?;
        let (tx, ty, tw, th) = pixel_rect(start, h, w);
        let mut template = Vec::new();
        patch(&g0, h, w, tx, ty, tw, th, &mut template);
        let mut prev = (tx, ty);
        let mut cand = Vec::new();
        for i in 1..n - 1 {
            let (fh, fw, g) = grey(&frames[i])?;
            if (fh, fw) != (h, w) {
                return Err(Error::shape("track_roi", "frames differ in size"));
            }
            let rx = (tw as isize / 2).max(4);
            let ry = (th as isize / 2).max(4);
            let mut best = (f64::NEG_INFINITY, prev);
            for dy in -ry..=ry {
                let y0 = prev.1 + dy;
                if y0 < 0 || y0 + th as isize > h as isize {
                    continue;
                }
                for dx in -rx..=rx {
                    let x0 = prev.0 + dx;
                    patch(&g, h, w, x0, y0, tw, th, &mut cand);
                    let s = ncc(&template, &cand);
                    if s > best.0 {
                        best = (s, (x0, y0));
                    }
                }
            }
            if best.0 >= NCC_MIN_PEAK {
                prev = best.1;
                let ib = &interp[i];
                let cx = (best.1 .0 as f64 + tw as f64 / 2.0) / w as f64;
                let cy = (best.1 .1 as f64 + th as f64 / 2.0) / h as f64;
                let (bw, bh) = (ib.width(), ib.height());
                let y1 = (cy - bh / 2.0).clamp(0.0, 1.0 - bh);
                out[i] = wrapped_box(cx - bw / 2.0, bw, y1, y1 + bh);
            } else {
                log::debug!("frame {i}: peak correlation {:.3} below {NCC_MIN_PEAK}; interpolating", best.0);
                let (px, py, _, _) = pixel_rect(&interp[i], h, w);
                prev = (px, py);
            }
        }
    }
    out[0] = *start;
    out[n - 1] = *end;
    Ok(out)
}

fn csv_err(path: &str, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.into(),
        line,
        column: column.into(),
        message: message.into(),
    }
}

/// Write annotations in the canonical CSV layout (header always present).
pub fn export_csv<W: Write>(annotations: &[RoiAnnotation], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| csv_err("<output>", 0, "", e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for a in annotations {
        for e in &a.entries {
            let b = &e.bbox;
            w.write_record([
                a.video_id.clone(),
                a.action.clone(),
                e.frame.to_string(),
                format!("{:.6}", e.t_seconds),
                format!("{:.6}", b.x1),
                format!("{:.6}", b.y1),
                format!("{:.6}", b.x2),
                format!("{:.6}", b.y2),
                u8::from(b.wraps()).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| csv_err("<output>", 0, "", e.to_string()))
}

pub fn export_csv_string(annotations: &[RoiAnnotation]) -> Result<String> {
    let mut buf = Vec::new();
    export_csv(annotations, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Read annotations. Consecutive rows with the same video and action and
/// consecutive frame numbers form one annotation. `source` names the input
/// in error messages.
pub fn import_csv<R: Read>(input: R, source: &str) -> Result<Vec<RoiAnnotation>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_err(source, 1, "", e.to_string()))?,
        None => return Err(csv_err(source, 1, "", "missing header")),
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(csv_err(source, 1, "", format!("header must be {}", CSV_HEADER.join(","))));
    }
    let mut out: Vec<RoiAnnotation> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(source, line, "", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(csv_err(source, line, "", format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|e| csv_err(source, line, CSV_HEADER[i], format!("{:?}: {e}", &rec[i])))?;
            if !v.is_finite() {
                return Err(csv_err(source, line, CSV_HEADER[i], "not finite"));
            }
            Ok(v)
        };
        if rec[0].is_empty() {
            return Err(csv_err(source, line, "video_id", "empty"));
        }
        if rec[1].is_empty() {
            return Err(csv_err(source, line, "action", "empty"));
        }
        let frame: usize = rec[2]
            .trim()
            .parse()
            .map_err(|e| csv_err(source, line, "frame", format!("{:?}: {e}", &rec[2])))?;
        let t_seconds = num(3)?;
        let (x1, y1, x2, y2) = (num(4)?, num(5)?, num(6)?, num(7)?);
        let wraps = match &rec[8] {
            "0" => false,
            "1" => true,
            v => return Err(csv_err(source, line, "wraps", format!("{v:?} must be 0 or 1"))),
        };
        if (x2 < x1) != wraps {
            let msg = if wraps { "wraps=1 but x2 >= x1" } else { "x2 < x1 without the wrap flag" };
            return Err(csv_err(source, line, "x2", msg));
        }
        let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| csv_err(source, line, "x1", e.to_string()))?;
        let entry = RoiFrame { frame, t_seconds, bbox };
        match out.last_mut() {
            Some(a)
                if a.video_id == rec[0]
                    && a.action == rec[1]
                    && a.entries.last().is_some_and(|l| l.frame + 1 == frame) =>
            {
                a.entries.push(entry)
            }
            _ => out.push(RoiAnnotation {
                video_id: rec[0].to_string(),
                action: rec[1].to_string(),
                entries: vec![entry],
            }),
        }
    }
    Ok(out)
}

pub fn import_csv_file(path: &std::path::Path) -> Result<Vec<RoiAnnotation>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    import_csv(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn export_csv_file(annotations: &[RoiAnnotation], path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    export_csv(annotations, std::io::BufWriter::new(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the annotation in the dataset.
    pub annotation: usize,
    pub video_id: String,
    pub frame: Option<usize>,
    pub message: String,
}

/// Every rule a dataset breaks; empty when it is clean.
pub fn validate(dataset: &[RoiAnnotation], vocabulary: &[String]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, a) in dataset.iter().enumerate() {
        let mut flag = |frame: Option<usize>, message: String| {
            out.push(Violation {
                annotation: i,
                video_id: a.video_id.clone(),
                frame,
                message,
            })
        };
        if !vocabulary.iter().any(|v| *v == a.action) {
            flag(None, format!("unknown action label {:?}", a.action));
        }
        if a.entries.is_empty() {
            flag(None, "annotation has no frames".into());
        }
        for (j, e) in a.entries.iter().enumerate() {
            if let Err(err) = e.bbox.validate() {
                flag(Some(e.frame), format!("box out of bounds: {err}"));
            }
            if !(e.t_seconds.is_finite() && e.t_seconds >= 0.0) {
                flag(Some(e.frame), format!("invalid timestamp {}", e.t_seconds));
            }
            if j > 0 {
                let p = &a.entries[j - 1];
                if e.frame != p.frame + 1 {
                    flag(Some(e.frame), format!("frame range not contiguous: {} follows {}", e.frame, p.frame));
                }
                if e.t_seconds <= p.t_seconds {
                    flag(Some(e.frame), format!("timestamp {} does not increase past {}", e.t_seconds, p.t_seconds));
                }
            }
        }
    }
    out
}

/// Cohen's κ between two label sequences.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "label lists must have equal non-zero length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut ca: HashMap<&T, f64> = HashMap::new();
    let mut cb: HashMap<&T, f64> = HashMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = ca.iter().map(|(k, &c)| c / n * cb.get(k).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(if po == 1.0 { 1.0 } else { 0.0 });
    }
    Ok(((po - pe) / (1.0 - pe)).clamp(-1.0, 1.0))
}

/// Mean wrap-aware IoU between two box sequences of equal length.
pub fn mean_iou(a: &[BBox], b: &[BBox]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| wrap_iou(x, y)).sum::<f64>() / a.len() as f64
}
