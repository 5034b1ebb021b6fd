use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2` when valid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Clip to `[0,width] x [0,height]`; `None` when nothing is left.
    pub fn clip(&self, width: f32, height: f32) -> Option<BBox> {
        let b = BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        );
        b.is_valid().then_some(b)
    }

    pub fn hflip(&self, width: f32) -> BBox {
        BBox::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }

    /// `p -> p * scale + offset` on both axes.
    pub fn affine(&self, sx: f32, sy: f32, ox: f32, oy: f32) -> BBox {
        BBox::new(self.x1 * sx + ox, self.y1 * sy + oy, self.x2 * sx + ox, self.y2 * sy + oy)
    }

    pub fn intersection(&self, other: &BBox) -> f32 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }
}

/// Intersection over union of two non-degenerate boxes, in `f64`.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return invalid(format!("iou needs positive-area boxes, got {a:?} and {b:?}"));
    }
    let (ax1, ay1, ax2, ay2) = (a.x1 as f64, a.y1 as f64, a.x2 as f64, a.y2 as f64);
    let (bx1, by1, bx2, by2) = (b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    Ok(inter / union)
}

/// Ground-truth object: box plus class id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub class_id: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let third = iou(&a, &BBox::new(1.0, 0.0, 3.0, 2.0)).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
        assert!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)).is_err());
    }

    #[test]
    fn clip_and_flip() {
        let b = BBox::new(-3.0, 2.0, 5.0, 12.0);
        assert_eq!(b.clip(10.0, 10.0), Some(BBox::new(0.0, 2.0, 5.0, 10.0)));
        assert_eq!(BBox::new(11.0, 0.0, 12.0, 1.0).clip(10.0, 10.0), None);
        assert_eq!(b.hflip(10.0).hflip(10.0), b);
    }
}
