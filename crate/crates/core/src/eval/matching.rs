//! Per-image detection-to-ground-truth matching and the operating-point
//! metrics derived from aggregated counts.

use crate::geometry::{iou, AbsBox, Detection};

/// Outcome for one detection, in input order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionFlag {
    pub is_tp: bool,
    /// Index into the ground-truth list this detection claimed.
    pub matched_gt: Option<usize>,
    /// IoU with the claimed ground truth (0 for false positives).
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub flags: Vec<DetectionFlag>,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.flags.iter().filter(|f| f.is_tp).count()
    }

    pub fn fp(&self) -> usize {
        self.flags.len() - self.tp()
    }
}

/// Greedy matching in descending score order; ties prefer the detection
/// with the larger best-IoU candidate, then input order. A detection is a
/// true positive iff its best-IoU unmatched ground truth of the same
/// category reaches `iou_thresh`, which it then claims.
pub fn match_detections(
    dets: &[Detection],
    gts: &[(u32, AbsBox)],
    iou_thresh: f64,
) -> MatchResult {
    // Static best IoU against any same-category ground truth, for the tie
    // rule only.
    let best_static: Vec<f64> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .filter(|(cat, _)| *cat == d.category_id)
                .map(|(_, g)| iou(&d.bbox, g).unwrap_or(0.0))
                .fold(0.0, f64::max)
        })
        .collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                best_static[b]
                    .partial_cmp(&best_static[a])
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });

    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![
        DetectionFlag {
            is_tp: false,
            matched_gt: None,
            iou: 0.0,
        };
        dets.len()
    ];
    for &di in &order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, (cat, g)) in gts.iter().enumerate() {
            if claimed[gi] || *cat != d.category_id {
                continue;
            }
            let v = iou(&d.bbox, g).unwrap_or(0.0);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            if v >= iou_thresh {
                claimed[gi] = true;
                flags[di] = DetectionFlag {
                    is_tp: true,
                    matched_gt: Some(gi),
                    iou: v,
                };
            }
        }
    }
    let false_negatives = claimed.iter().filter(|&&c| !c).count();
    MatchResult {
        flags,
        false_negatives,
    }
}

/// Operating-point metrics with the empty-set convention: an image set with
/// nothing to detect and nothing detected scores perfectly.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_count: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        if fn_count == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_count == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_count) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}
