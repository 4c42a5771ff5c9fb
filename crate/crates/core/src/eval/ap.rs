//! Pooled average precision with 101-point interpolation and the
//! 0.50:0.95 threshold sweep.

use crate::geometry::{AbsBox, Detection};

use super::matching::match_detections;

/// The ten IoU thresholds averaged by mAP@0.5:0.95.
pub const MAP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// One image's detections and ground truths, borrowed for pooling.
#[derive(Clone, Copy)]
pub struct ImageEval<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [(u32, AbsBox)],
}

/// Precision-recall sweep over detection confidence at one IoU threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PRCurve {
    /// (recall, precision), one point per distinct confidence, descending.
    pub points: Vec<(f64, f64)>,
    pub iou_thresh: f64,
}

/// Pooled (score, is_tp) pairs in global descending-score order; matching is
/// per image, pooling is global. Ties across images break by image index
/// then detection index for determinism.
fn pooled_flags(images: &[ImageEval], iou_thresh: f64) -> (Vec<(f64, bool)>, usize) {
    let mut total_gts = 0usize;
    let mut pool: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (img_idx, img) in images.iter().enumerate() {
        total_gts += img.gts.len();
        let m = match_detections(img.dets, img.gts, iou_thresh);
        for (det_idx, (d, f)) in img.dets.iter().zip(&m.flags).enumerate() {
            pool.push((d.score, img_idx, det_idx, f.is_tp));
        }
    }
    pool.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    (pool.into_iter().map(|(s, _, _, tp)| (s, tp)).collect(), total_gts)
}

/// Cumulative (recall, precision) after each pooled detection.
fn cumulative_points(flags: &[(f64, bool)], total_gts: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (i, &(_, is_tp)) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = if total_gts == 0 {
            0.0
        } else {
            tp as f64 / total_gts as f64
        };
        points.push((recall, precision));
    }
    points
}

/// 101-point interpolated AP: mean over recall anchors 0.00, 0.01, ..., 1.00
/// of the maximum precision achieved at recall >= anchor.
pub fn ap(images: &[ImageEval], iou_thresh: f64) -> f64 {
    let (flags, total_gts) = pooled_flags(images, iou_thresh);
    if total_gts == 0 {
        // Nothing to recall: perfect iff nothing was claimed.
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let points = cumulative_points(&flags, total_gts);
    let mut sum = 0.0;
    for anchor in 0..=100 {
        let r = anchor as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(recall, _)| *recall >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Mean AP over the ten thresholds of [`MAP_THRESHOLDS`].
pub fn map_range(images: &[ImageEval]) -> f64 {
    MAP_THRESHOLDS.iter().map(|&t| ap(images, t)).sum::<f64>() / MAP_THRESHOLDS.len() as f64
}

/// One (recall, precision) point per distinct confidence value, descending.
pub fn pr_curve(images: &[ImageEval], iou_thresh: f64) -> PRCurve {
    let (flags, total_gts) = pooled_flags(images, iou_thresh);
    let cumulative = cumulative_points(&flags, total_gts);
    let mut points = Vec::new();
    for (i, &(score, _)) in flags.iter().enumerate() {
        let last_of_group = flags.get(i + 1).map_or(true, |&(next, _)| next != score);
        if last_of_group {
            points.push(cumulative[i]);
        }
    }
    PRCurve {
        points,
        iou_thresh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Detection;

    fn abx(x0: f64, y0: f64, x1: f64, y1: f64) -> AbsBox {
        AbsBox { x0, y0, x1, y1 }
    }

    #[test]
    fn perfect_single_detection_has_ap_one() {
        let gts = vec![(0u32, abx(0.0, 0.0, 10.0, 10.0))];
        let dets = vec![Detection::new(abx(0.0, 0.0, 10.0, 10.0), 0.9, 0)];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        assert_eq!(ap(&images, 0.5), 1.0);
    }

    #[test]
    fn zero_detections_have_ap_zero() {
        let gts = vec![(0u32, abx(0.0, 0.0, 10.0, 10.0))];
        let images = [ImageEval {
            dets: &[],
            gts: &gts,
        }];
        assert_eq!(ap(&images, 0.5), 0.0);
    }

    #[test]
    fn tp_then_fp_reproduces_the_fifty_one_over_one_o_one_value() {
        // 2 GTs, det1 TP at 0.9, det2 FP at 0.8:
        // points (0.5, 1.0), (0.5, 0.5); anchors 0.00..0.50 see precision 1.
        let gts = vec![
            (0u32, abx(0.0, 0.0, 10.0, 10.0)),
            (0u32, abx(50.0, 50.0, 60.0, 60.0)),
        ];
        let dets = vec![
            Detection::new(abx(0.0, 0.0, 10.0, 10.0), 0.9, 0),
            Detection::new(abx(100.0, 100.0, 110.0, 110.0), 0.8, 0),
        ];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        let got = ap(&images, 0.5);
        assert!((got - 51.0 / 101.0).abs() < 1e-9, "ap {got}");

        let curve = pr_curve(&images, 0.5);
        assert_eq!(curve.points, vec![(0.5, 1.0), (0.5, 0.5)]);
    }

    #[test]
    fn uniform_iou_detections_step_across_thresholds() {
        // One detection per GT with IoU exactly 0.6: perfect at 0.50-0.60,
        // useless above, so the 0.5:0.95 mean is 0.3.
        let gts = vec![(0u32, abx(0.0, 0.0, 10.0, 10.0))];
        // IoU (8x10)/(12x10 - ... ) pick overlap 0.6: width 10 box shifted
        // right by 2.5: inter 7.5*10=75, union 100+100-75=125, IoU 0.6.
        let dets = vec![Detection::new(abx(2.5, 0.0, 12.5, 10.0), 0.9, 0)];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        let got = map_range(&images);
        assert!((got - 0.3).abs() < 1e-9, "map {got}");
        assert_eq!(ap(&images, 0.60), 1.0);
        assert_eq!(ap(&images, 0.65), 0.0);
    }

    #[test]
    fn detections_equal_to_gts_have_full_map() {
        let gts = vec![
            (0u32, abx(0.0, 0.0, 10.0, 10.0)),
            (0u32, abx(20.0, 20.0, 40.0, 45.0)),
        ];
        let dets: Vec<Detection> = gts
            .iter()
            .map(|(c, b)| Detection::new(*b, 0.9, *c))
            .collect();
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        assert_eq!(map_range(&images), 1.0);
    }

    #[test]
    fn map_range_never_exceeds_ap50() {
        use crate::rng::Stream;
        let mut rng = Stream::new(60);
        for _ in 0..50 {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            for _ in 0..rng.range_usize(1, 5) {
                let x = rng.range_f64(0.0, 80.0);
                let y = rng.range_f64(0.0, 80.0);
                let w = rng.range_f64(5.0, 20.0);
                let h = rng.range_f64(5.0, 20.0);
                gts.push((0u32, abx(x, y, x + w, y + h)));
                if rng.coin(0.8) {
                    let jx = rng.range_f64(-5.0, 5.0);
                    let jy = rng.range_f64(-5.0, 5.0);
                    dets.push(Detection::new(
                        abx(x + jx, y + jy, x + w + jx, y + h + jy),
                        rng.uniform(),
                        0,
                    ));
                }
            }
            if rng.coin(0.5) {
                dets.push(Detection::new(abx(90.0, 90.0, 99.0, 99.0), rng.uniform(), 0));
            }
            let images = [ImageEval {
                dets: &dets,
                gts: &gts,
            }];
            let a50 = ap(&images, 0.5);
            let m = map_range(&images);
            assert!(m <= a50 + 1e-12, "map {m} > ap50 {a50}");
        }
    }

    #[test]
    fn ap_depends_only_on_score_ranks() {
        let gts = vec![
            (0u32, abx(0.0, 0.0, 10.0, 10.0)),
            (0u32, abx(50.0, 0.0, 60.0, 10.0)),
        ];
        let dets = vec![
            Detection::new(abx(0.0, 0.0, 10.0, 10.0), 0.9, 0),
            Detection::new(abx(90.0, 90.0, 95.0, 95.0), 0.6, 0),
            Detection::new(abx(50.0, 0.0, 60.0, 10.0), 0.3, 0),
        ];
        let monotone: Vec<Detection> = dets
            .iter()
            .map(|d| Detection::new(d.bbox, (d.score * 3.0).tanh(), d.category_id))
            .collect();
        let a = ap(
            &[ImageEval {
                dets: &dets,
                gts: &gts,
            }],
            0.5,
        );
        let b = ap(
            &[ImageEval {
                dets: &monotone,
                gts: &gts,
            }],
            0.5,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn trailing_low_score_fp_never_raises_ap() {
        let gts = vec![(0u32, abx(0.0, 0.0, 10.0, 10.0))];
        let dets = vec![Detection::new(abx(0.0, 0.0, 10.0, 10.0), 0.9, 0)];
        let mut with_fp = dets.clone();
        with_fp.push(Detection::new(abx(50.0, 50.0, 60.0, 60.0), 0.1, 0));
        let base = ap(
            &[ImageEval {
                dets: &dets,
                gts: &gts,
            }],
            0.5,
        );
        let worse = ap(
            &[ImageEval {
                dets: &with_fp,
                gts: &gts,
            }],
            0.5,
        );
        assert!(worse <= base);
    }
}
