//! Bounding-box geometry: normalized/pixel box types, IoU, greedy NMS, and
//! coordinate conversions. Everything here is a pure function over immutable
//! values and safe to call from any number of workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for boxes that poke out of the unit square by rounding noise.
pub const NORM_EDGE_SLACK: f64 = 1e-6;

/// Center/size box in image-fraction coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidBox("non-finite coordinate".into()));
        }
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::InvalidBox(format!(
                "center ({}, {}) outside unit square",
                self.cx, self.cy
            )));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size ({}, {})",
                self.w, self.h
            )));
        }
        let slack = NORM_EDGE_SLACK;
        if self.cx - self.w / 2.0 < -slack
            || self.cx + self.w / 2.0 > 1.0 + slack
            || self.cy - self.h / 2.0 < -slack
            || self.cy + self.h / 2.0 > 1.0 + slack
        {
            return Err(Error::InvalidBox(format!(
                "box ({}, {}, {}, {}) extends past the unit square",
                self.cx, self.cy, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner form (x0, y0, x1, y1), still normalized.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }
}

/// Corner box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl AbsBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidBox("non-finite coordinate".into()));
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::DegenerateBox);
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// A scored, categorized box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: AbsBox,
    pub score: f64,
    pub category_id: u32,
}

impl Detection {
    pub fn new(bbox: AbsBox, score: f64, category_id: u32) -> Self {
        Self {
            bbox,
            score,
            category_id,
        }
    }
}

/// Intersection over union of two pixel boxes.
///
/// Touching edges count as zero overlap, so IoU of adjacent boxes is exactly 0.
pub fn iou(a: &AbsBox, b: &AbsBox) -> Result<f64> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// Greedy non-maximum suppression.
///
/// Order: score descending, ties broken by smaller area, then input order.
/// A detection survives iff its IoU with every already-kept detection of the
/// same category is strictly below `iou_thresh`. Output keeps that order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                dets[a]
                    .bbox
                    .area()
                    .partial_cmp(&dets[b].bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });

    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|k| {
            k.category_id == d.category_id
                && iou(&k.bbox, &d.bbox).unwrap_or(0.0) >= iou_thresh
        });
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Normalized center box to pixel corners.
pub fn norm_to_abs(nb: &NormBox, width: u32, height: u32) -> Result<AbsBox> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be positive".into()));
    }
    let w = width as f64;
    let h = height as f64;
    AbsBox::new(
        (nb.cx - nb.w / 2.0) * w,
        (nb.cy - nb.h / 2.0) * h,
        (nb.cx + nb.w / 2.0) * w,
        (nb.cy + nb.h / 2.0) * h,
    )
    .map_err(|_| Error::DegenerateBox)
}

/// Pixel corners back to a normalized center box.
pub fn abs_to_norm(ab: &AbsBox, width: u32, height: u32) -> Result<NormBox> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be positive".into()));
    }
    let w = width as f64;
    let h = height as f64;
    NormBox::new(
        (ab.x0 + ab.x1) / 2.0 / w,
        (ab.y0 + ab.y1) / 2.0 / h,
        (ab.x1 - ab.x0) / w,
        (ab.y1 - ab.y0) / h,
    )
    .map_err(|_| Error::DegenerateBox)
}

/// Intersect a box with the unit square.
///
/// Returns `None` when less than 25% of the original area survives; such
/// slivers are dropped by the augmentation pipeline rather than kept as
/// near-invisible labels.
pub const CLIP_SURVIVAL_MIN: f64 = 0.25;

pub fn clip_box(nb: &NormBox) -> Option<NormBox> {
    let (x0, y0, x1, y1) = nb.corners();
    // Clip each axis independently; an axis already inside the unit interval
    // keeps its original center/size bit-for-bit.
    let clip_axis = |lo: f64, hi: f64, center: f64, size: f64| -> Option<(f64, f64)> {
        if lo >= 0.0 && hi <= 1.0 {
            return Some((center, size));
        }
        let clo = lo.max(0.0);
        let chi = hi.min(1.0);
        if clo >= chi {
            return None;
        }
        Some(((clo + chi) / 2.0, chi - clo))
    };
    let (cx, w) = clip_axis(x0, x1, nb.cx, nb.w)?;
    let (cy, h) = clip_axis(y0, y1, nb.cy, nb.h)?;
    if w * h < CLIP_SURVIVAL_MIN * nb.area() {
        return None;
    }
    Some(NormBox { cx, cy, w, h })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abx(x0: f64, y0: f64, x1: f64, y1: f64) -> AbsBox {
        AbsBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Count-cells oracle: rasterize on a grid aligned with quantized
    /// coordinates so the counts are exact areas.
    fn iou_raster(a: &AbsBox, b: &AbsBox, cell: f64) -> f64 {
        let x_lo = a.x0.min(b.x0);
        let y_lo = a.y0.min(b.y0);
        let x_hi = a.x1.max(b.x1);
        let y_hi = a.y1.max(b.y1);
        let nx = ((x_hi - x_lo) / cell).round() as usize;
        let ny = ((y_hi - y_lo) / cell).round() as usize;
        let mut inter = 0usize;
        let mut union = 0usize;
        for iy in 0..ny {
            let y = y_lo + (iy as f64 + 0.5) * cell;
            for ix in 0..nx {
                let x = x_lo + (ix as f64 + 0.5) * cell;
                let in_a = x > a.x0 && x < a.x1 && y > a.y0 && y < a.y1;
                let in_b = x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1;
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_identical_boxes_is_one() {
        let a = abx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes_is_zero() {
        let a = abx(0.0, 0.0, 1.0, 1.0);
        let b = abx(2.0, 2.0, 3.0, 3.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_overlapping_quarters() {
        let a = abx(0.0, 0.0, 2.0, 2.0);
        let b = abx(1.0, 1.0, 3.0, 3.0);
        let got = iou(&a, &b).unwrap();
        assert!((got - 1.0 / 7.0).abs() < 1e-12);
        assert!((got - iou_raster(&a, &b, 0.25)).abs() < 1e-3);
    }

    #[test]
    fn iou_touching_boxes_is_exactly_zero() {
        let a = abx(0.0, 0.0, 1.0, 1.0);
        let b = abx(1.0, 0.0, 2.0, 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_degenerate_boxes() {
        let a = AbsBox {
            x0: 0.0,
            y0: 0.0,
            x1: 0.0,
            y1: 1.0,
        };
        let b = abx(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(iou(&a, &b), Err(Error::DegenerateBox)));
    }

    #[test]
    fn nms_single_detection_kept() {
        let d = Detection::new(abx(0.0, 0.0, 1.0, 1.0), 0.7, 0);
        assert_eq!(nms(&[d], 0.5), vec![d]);
    }

    #[test]
    fn nms_suppresses_identical_boxes() {
        let hi = Detection::new(abx(0.0, 0.0, 2.0, 2.0), 0.9, 0);
        let lo = Detection::new(abx(0.0, 0.0, 2.0, 2.0), 0.8, 0);
        let kept = nms(&[lo, hi], 0.5);
        assert_eq!(kept, vec![hi]);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let a = Detection::new(abx(0.0, 0.0, 1.0, 1.0), 0.9, 0);
        let b = Detection::new(abx(5.0, 5.0, 6.0, 6.0), 0.8, 0);
        assert_eq!(nms(&[a, b], 0.5), vec![a, b]);
    }

    #[test]
    fn nms_is_category_aware() {
        let a = Detection::new(abx(0.0, 0.0, 2.0, 2.0), 0.9, 0);
        let b = Detection::new(abx(0.0, 0.0, 2.0, 2.0), 0.8, 1);
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    #[test]
    fn nms_tie_break_prefers_smaller_area() {
        let big = Detection::new(abx(0.0, 0.0, 4.0, 4.0), 0.9, 0);
        let small = Detection::new(abx(0.0, 0.0, 2.0, 2.0), 0.9, 0);
        let kept = nms(&[big, small], 0.1);
        assert_eq!(kept, vec![small]);
    }

    #[test]
    fn norm_abs_full_image() {
        let nb = NormBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let ab = norm_to_abs(&nb, 640, 640).unwrap();
        assert_eq!(ab, abx(0.0, 0.0, 640.0, 640.0));
    }

    #[test]
    fn abs_norm_quarter_box() {
        let ab = abx(160.0, 160.0, 480.0, 480.0);
        let nb = abs_to_norm(&ab, 640, 640).unwrap();
        assert_eq!(nb, NormBox::new(0.5, 0.5, 0.5, 0.5).unwrap());
    }

    #[test]
    fn clip_box_inside_is_unchanged() {
        let nb = NormBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        assert_eq!(clip_box(&nb), Some(nb));
    }

    #[test]
    fn clip_box_halves_a_box_straddling_the_edge() {
        // Left half outside: x-range [-0.1, 0.1] clips to [0, 0.1].
        let nb = NormBox {
            cx: 0.0,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        };
        let clipped = clip_box(&nb).unwrap();
        assert!((clipped.w - 0.1).abs() < 1e-12);
        assert!((clipped.cx - 0.05).abs() < 1e-12);
        assert_eq!(clipped.h, nb.h);
    }

    #[test]
    fn clip_box_drops_mostly_outside_boxes() {
        // 90% of the area hangs off the left edge.
        let nb = NormBox {
            cx: -0.08,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        };
        assert_eq!(clip_box(&nb), None);
    }
}
