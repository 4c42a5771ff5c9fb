//! Evaluation protocol: greedy score-ordered matching, operating-point
//! precision/recall/F1, COCO-style 101-point interpolated AP, the
//! 0.50:0.95 threshold sweep, per-camera breakdowns, and PR-curve emission.

mod ap;
mod matching;
mod report;

pub use ap::{ap, map_range, pr_curve, ImageEval, PRCurve, MAP_THRESHOLDS};
pub use matching::{match_detections, precision_recall_f1, DetectionFlag, MatchResult};
pub use report::{emit_pr, evaluate, Counts, EvalReport, MetricBlock, OPERATING_IOU};
