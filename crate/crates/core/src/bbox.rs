//! Boxes in normalised ERP coordinates.
//!
//! `x` is periodic on `[0, 1)`: a box with `x1 > x2` covers the arc
//! `[x1, 1) ∪ [0, x2]` and crosses the seam. `y` is an ordinary interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Checked constructor: coordinates in `[0, 1]`, `y1 < y2`, `x1 ≠ x2`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.x1, self.y1, self.x2, self.y2].into_iter().all(inside) {
            return Err(Error::OutOfRange(format!("box {self:?} has coordinates outside [0, 1]")));
        }
        if !(self.y1 < self.y2) {
            return Err(Error::InvalidArgument(format!("box {self:?} needs y1 < y2")));
        }
        if self.width() <= 0.0 {
            return Err(Error::InvalidArgument(format!("box {self:?} has zero width")));
        }
        Ok(())
    }

    /// Box from a centre, width and height; `x` wraps, `y` is clipped.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        let w = w.clamp(1e-6, 1.0 - 1e-6);
        let x1 = (cx - w / 2.0).rem_euclid(1.0);
        let x2 = x1 + w;
        let x2 = if x2 > 1.0 { x2 - 1.0 } else { x2 };
        BBox {
            x1,
            y1: (cy - h / 2.0).max(0.0),
            x2,
            y2: (cy + h / 2.0).min(1.0),
        }
    }

    pub fn wraps(&self) -> bool {
        self.x1 > self.x2
    }

    pub fn width(&self) -> f64 {
        if self.wraps() {
            1.0 - self.x1 + self.x2
        } else {
            self.x2 - self.x1
        }
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Centre, with the x coordinate taken along the arc.
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.width() / 2.0).rem_euclid(1.0), (self.y1 + self.y2) / 2.0)
    }

    /// Same box moved by `dx` around the circle.
    pub fn shifted(&self, dx: f64) -> BBox {
        let x1 = (self.x1 + dx).rem_euclid(1.0);
        let x2 = x1 + self.width();
        BBox {
            x1,
            y1: self.y1,
            x2: if x2 > 1.0 { x2 - 1.0 } else { x2 },
            y2: self.y2,
        }
    }
}

/// Length of the intersection of two arcs on the unit circle, each given as a
/// start in `[0, 1)` and a length in `(0, 1]`.
pub fn arc_overlap(a0: f64, alen: f64, b0: f64, blen: f64) -> f64 {
    let mut total = 0.0;
    for k in [-1.0, 0.0, 1.0] {
        let lo = a0.max(b0 + k);
        let hi = (a0 + alen).min(b0 + k + blen);
        if hi > lo {
            total += hi - lo;
        }
    }
    total.min(alen).min(blen)
}

/// Intersection area of two boxes on the cylinder.
pub fn wrap_intersection(a: &BBox, b: &BBox) -> f64 {
    let dy = a.y2.min(b.y2) - a.y1.max(b.y1);
    if dy <= 0.0 {
        return 0.0;
    }
    // canonical argument order keeps the result bit-identical under swapping
    let (p, q) = if (a.x1, a.x2) <= (b.x1, b.x2) { (a, b) } else { (b, a) };
    arc_overlap(p.x1.rem_euclid(1.0), p.width(), q.x1.rem_euclid(1.0), q.width()) * dy
}

/// Intersection over union with `x` treated as periodic.
pub fn wrap_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = wrap_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn validation() {
        assert!(BBox::new(0.1, 0.5, 0.2, 0.4).is_err());
        assert!(BBox::new(0.1, 0.1, 0.1, 0.4).is_err());
        assert!(BBox::new(-0.1, 0.1, 0.2, 0.4).is_err());
        assert!(BBox::new(0.9, 0.1, 0.1, 0.4).is_ok());
    }

    #[test]
    fn iou_fixtures() {
        let a = b(0.1, 0.1, 0.3, 0.3);
        assert_eq!(wrap_iou(&a, &a), 1.0);
        assert_eq!(wrap_iou(&a, &b(0.5, 0.5, 0.6, 0.6)), 0.0);
        let seam = b(30.0 / 32.0, 0.2, 2.0 / 32.0, 0.4);
        let right = b(0.0, 0.2, 2.0 / 32.0, 0.4);
        assert!((wrap_iou(&seam, &right) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plain_boxes_match_standard_iou() {
        let a = b(0.1, 0.1, 0.4, 0.5);
        let c = b(0.2, 0.3, 0.6, 0.7);
        let inter = 0.2 * 0.2;
        let expect = inter / (0.3 * 0.4 + 0.4 * 0.4 - inter);
        assert!((wrap_iou(&a, &c) - expect).abs() < 1e-12);
    }

    #[test]
    fn center_of_wrapping_box() {
        let c = b(0.9, 0.2, 0.1, 0.4).center();
        assert!(c.0.abs() < 1e-12 || (c.0 - 1.0).abs() < 1e-12);
        let f = BBox::from_center(0.02, 0.5, 0.1, 0.2);
        assert!(f.wraps());
        assert!((f.width() - 0.1).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..1.0, 0.02f64..0.6, 0.0f64..0.7, 0.02f64..0.3)
            .prop_map(|(x1, w, y1, h)| BBox::from_center((x1 + w / 2.0).rem_euclid(1.0), y1 + h / 2.0, w, h))
    }

    proptest! {
        #[test]
        fn symmetric_and_shift_invariant(a in arb_box(), c in arb_box(), s in -2.0f64..2.0) {
            let ab = wrap_iou(&a, &c);
            prop_assert_eq!(ab, wrap_iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((wrap_iou(&a.shifted(s), &c.shifted(s)) - ab).abs() < 1e-9);
        }
    }
}
