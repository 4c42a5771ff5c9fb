//! Whole-split evaluation with per-camera breakdowns, serialized reports,
//! and PR-curve CSV/SVG emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    image_path_for, label_path_for, parse_label_file, CameraTag, Manifest, Split,
};
use crate::detector::{predict, DetectorConfig, WeightSet};
use crate::error::{Error, Result};
use crate::geometry::{norm_to_abs, AbsBox, Detection};
use crate::imagebuf::ImageBuf;
use crate::parallel::map_with_workers;

use super::ap::{ap, map_range, pr_curve, ImageEval, PRCurve};
use super::matching::{match_detections, precision_recall_f1};

/// IoU threshold at which single-valued precision/recall/F1 are reported.
pub const OPERATING_IOU: f64 = 0.5;

/// Confidence floor for AP/PR computation. AP integrates the full
/// precision-recall sweep, so detections are collected nearly unfiltered and
/// the configured confidence threshold applies only to the operating-point
/// metrics; detection frameworks evaluate mAP the same way.
pub const EVAL_CONF_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub map50_95: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub gts: usize,
    pub detections: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraBlock {
    #[serde(flatten)]
    pub metrics: MetricBlock,
    pub counts: Counts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_camera: BTreeMap<String, CameraBlock>,
    pub counts: Counts,
    /// (recall, precision) polylines at the operating IoU, keyed "overall"
    /// or by camera tag; consumed by `plot-pr`.
    #[serde(default)]
    pub pr_curves: BTreeMap<String, Vec<(f64, f64)>>,
}

struct EvaluatedImage {
    camera: CameraTag,
    /// Everything above the curve floor, for AP/PR.
    dets_sweep: Vec<Detection>,
    /// The subset at or above the configured confidence, for P/R/F1.
    dets_operating: Vec<Detection>,
    gts: Vec<(u32, AbsBox)>,
}

fn metrics_for(images: &[&EvaluatedImage]) -> MetricBlock {
    let evals: Vec<ImageEval> = images
        .iter()
        .map(|e| ImageEval {
            dets: &e.dets_sweep,
            gts: &e.gts,
        })
        .collect();
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_count = 0;
    for e in images {
        let m = match_detections(&e.dets_operating, &e.gts, OPERATING_IOU);
        tp += m.tp();
        fp += m.fp();
        fn_count += m.false_negatives;
    }
    let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_count);
    MetricBlock {
        precision,
        recall,
        f1,
        ap50: ap(&evals, OPERATING_IOU),
        map50_95: map_range(&evals),
    }
}

fn counts_for(images: &[&EvaluatedImage]) -> Counts {
    Counts {
        images: images.len(),
        gts: images.iter().map(|e| e.gts.len()).sum(),
        detections: images.iter().map(|e| e.dets_operating.len()).sum(),
    }
}

/// Run the detector over every image of a split and aggregate the metrics,
/// optionally broken down by camera tag (all six tags always present in the
/// breakdown; cameras without images report empty-set metrics).
pub fn evaluate(
    manifest: &Manifest,
    manifest_path: &Path,
    split: Split,
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
    per_camera: bool,
    workers: usize,
) -> Result<EvalReport> {
    let records: Vec<_> = manifest
        .images
        .iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    // Fail fast on missing labels, naming the image.
    for rec in &records {
        if !label_path_for(manifest_path, &rec.id).exists() {
            return Err(Error::MissingLabel(rec.id.clone()));
        }
    }

    // Sweep config: same model, confidence floored for rank-complete curves.
    let sweep_config = DetectorConfig {
        conf_thresh: EVAL_CONF_FLOOR.min(config.conf_thresh),
        ..config.clone()
    };
    let evaluated: Vec<Result<EvaluatedImage>> = map_with_workers(workers, &records, |rec| {
        let image = ImageBuf::load(&image_path_for(manifest_path, rec))?;
        let dets_sweep = predict(&image, weights, &sweep_config)?;
        let dets_operating = dets_sweep
            .iter()
            .filter(|d| d.score >= config.conf_thresh)
            .copied()
            .collect();
        let labels = parse_label_file(&label_path_for(manifest_path, &rec.id), false)?;
        let gts = labels
            .entries
            .iter()
            .map(|e| Ok((e.category_id, norm_to_abs(&e.bbox, rec.width, rec.height)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluatedImage {
            camera: rec.camera,
            dets_sweep,
            dets_operating,
            gts,
        })
    });
    let evaluated: Vec<EvaluatedImage> = evaluated.into_iter().collect::<Result<_>>()?;

    let all: Vec<&EvaluatedImage> = evaluated.iter().collect();
    let mut report = EvalReport {
        overall: metrics_for(&all),
        counts: counts_for(&all),
        ..Default::default()
    };
    let overall_evals: Vec<ImageEval> = evaluated
        .iter()
        .map(|e| ImageEval {
            dets: &e.dets_sweep,
            gts: &e.gts,
        })
        .collect();
    report.pr_curves.insert(
        "overall".to_string(),
        pr_curve(&overall_evals, OPERATING_IOU).points,
    );

    if per_camera {
        for tag in CameraTag::ALL {
            let subset: Vec<&EvaluatedImage> =
                evaluated.iter().filter(|e| e.camera == tag).collect();
            let block = CameraBlock {
                metrics: metrics_for(&subset),
                counts: counts_for(&subset),
            };
            let evals: Vec<ImageEval> = subset
                .iter()
                .map(|e| ImageEval {
                    dets: &e.dets_sweep,
                    gts: &e.gts,
                })
                .collect();
            report
                .pr_curves
                .insert(tag.to_string(), pr_curve(&evals, OPERATING_IOU).points);
            report.per_camera.insert(tag.to_string(), block);
        }
    }
    Ok(report)
}

/// Write PR curves as CSV (`label,recall,precision`) and an SVG plot with
/// recall on the horizontal axis.
pub fn emit_pr(curves: &[(String, PRCurve)], csv_path: &Path, svg_path: &Path) -> Result<()> {
    let mut csv = String::from("label,recall,precision\n");
    for (label, curve) in curves {
        for (r, p) in &curve.points {
            writeln!(csv, "{label},{r:.9},{p:.9}").expect("string write");
        }
    }
    std::fs::write(csv_path, csv)?;
    std::fs::write(svg_path, render_svg(curves))?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn render_svg(curves: &[(String, PRCurve)]) -> String {
    let (w, h) = (480.0, 360.0);
    let (ml, mr, mt, mb) = (50.0, 20.0, 20.0, 40.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let x = |recall: f64| ml + recall * plot_w;
    let y = |precision: f64| mt + (1.0 - precision) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = write!(
        svg,
        r##"<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.2}</text>"#,
            x(f),
            h - mb + 14.0,
            f
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.2}</text>"#,
            ml - 6.0,
            y(f) + 3.0,
            f
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">recall</text>"#,
        ml + plot_w / 2.0,
        h - 8.0
    );
    let _ = write!(
        svg,
        r#"<text x="12" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 12 {:.1})">precision</text>"#,
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !curve.points.is_empty() {
            let pts: Vec<String> = curve
                .points
                .iter()
                .map(|(r, p)| format!("{:.2},{:.2}", x(*r), y(*p)))
                .collect();
            let _ = write!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
        let ly = mt + 14.0 + 14.0 * i as f64;
        let _ = write!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{label}</text>"#,
            ml + plot_w - 90.0,
            ml + plot_w - 70.0,
            ml + plot_w - 64.0,
            ly + 3.0
        );
    }
    svg.push_str("</svg>");
    svg
}
