//! Boxes on the horizontally periodic frame and exhaustive suppression.

/// `[x1, y1, x2, y2]` in normalised units; `x1 > x2` crosses the seam.
pub type Rect = [f64; 4];

/// The box cut at the seam into plain `[x_lo, x_hi]` spans.
fn spans(b: &Rect) -> Vec<(f64, f64)> {
    if b[0] <= b[2] {
        vec![(b[0], b[2])]
    } else {
        vec![(b[0], 1.0), (0.0, b[2])]
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

pub fn area(b: &Rect) -> f64 {
    spans(b).iter().map(|s| s.1 - s.0).sum::<f64>() * (b[3] - b[1])
}

/// Intersection over union, summing every pair of seam-cut pieces.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let dy = overlap((a[1], a[3]), (b[1], b[3]));
    let inter: f64 = spans(a).iter().flat_map(|&p| spans(b).into_iter().map(move |q| overlap(p, q))).sum::<f64>() * dy;
    if inter <= 0.0 {
        0.0
    } else {
        inter / (area(a) + area(b) - inter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Det {
    pub frame: usize,
    pub label: usize,
    pub confidence: f64,
    pub bbox: Rect,
}

/// Indices in suppression priority: confidence descending, then `x1`, then `y1`.
pub fn priority_order(dets: &[Det]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox[0].total_cmp(&b.bbox[0]))
            .then(a.bbox[1].total_cmp(&b.bbox[1]))
    });
    idx
}

/// Every subset `S` (as priority-ordered indices) that is a fixed point of
/// suppression: a box belongs to `S` exactly when no higher-priority member
/// of `S` on the same frame and class overlaps it by more than `thr`.
/// Enumerates all `2^n` subsets.
pub fn nms_fixed_points(dets: &[Det], thr: f64) -> Vec<Vec<usize>> {
    let n = dets.len();
    assert!(n <= 16, "exhaustive search is exponential");
    let order = priority_order(dets);
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let clash = |i: usize, j: usize| {
        dets[i].frame == dets[j].frame && dets[i].label == dets[j].label && iou(&dets[i].bbox, &dets[j].bbox) > thr
    };
    let mut out = Vec::new();
    for set in 0u32..1 << n {
        let member = |i: usize| set >> i & 1 == 1;
        let fixed = (0..n).all(|i| {
            let beaten = (0..n).any(|j| j != i && member(j) && rank[j] < rank[i] && clash(i, j));
            member(i) == !beaten
        });
        if fixed {
            out.push(order.iter().copied().filter(|&i| member(i)).collect());
        }
    }
    out
}
