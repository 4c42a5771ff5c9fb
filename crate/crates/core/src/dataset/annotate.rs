//! Two-phase annotation bootstrap: a trained baseline proposes candidate
//! boxes with confidences, a human's correction files override or filter
//! them into final ground truth.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{predict, DetectorConfig, WeightSet};
use crate::error::{Error, Result};
use crate::geometry::abs_to_norm;
use crate::imagebuf::ImageBuf;
use crate::parallel::map_with_workers;

use super::{parse_label_file, write_label_file, LabelEntry, LabelSet};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub images: usize,
    pub boxes: usize,
    pub skipped: Vec<String>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Run the detector over every image in `image_dir` and write one candidate
/// label file per image (confidence column included) into `out_dir`. Images
/// with no detections above `conf_thresh` get empty files; unreadable images
/// are skipped with a warning and recorded in the summary. Files are written
/// atomically so the per-image work can fan out across workers.
pub fn annotate_candidates(
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
    image_dir: &Path,
    conf_thresh: f64,
    out_dir: &Path,
    workers: usize,
) -> Result<AnnotateSummary> {
    if !(0.0 < conf_thresh && conf_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold {conf_thresh} outside (0, 1)"
        )));
    }
    fs::create_dir_all(out_dir)?;

    let mut images: Vec<std::path::PathBuf> = fs::read_dir(image_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    images.sort();

    let results: Vec<Result<(String, usize)>> = map_with_workers(workers, &images, |path| {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let image = ImageBuf::load(path)?;
        let dets = predict(&image, weights, config)?;
        let mut entries = Vec::new();
        for d in dets {
            if d.score < conf_thresh {
                continue;
            }
            let bbox = abs_to_norm(&d.bbox, image.width(), image.height())?;
            entries.push(LabelEntry {
                category_id: d.category_id,
                bbox,
                confidence: Some(d.score),
            });
        }
        let count = entries.len();
        let labels = LabelSet {
            image_id: id.clone(),
            entries,
        };
        // write-temp-then-rename so partially written files never exist
        let final_path = out_dir.join(format!("{id}.txt"));
        let tmp_path = out_dir.join(format!(".{id}.txt.tmp"));
        write_label_file(&labels, &tmp_path, true)?;
        fs::rename(&tmp_path, &final_path)?;
        Ok((id, count))
    });

    let mut summary = AnnotateSummary::default();
    for (path, result) in images.iter().zip(results) {
        match result {
            Ok((_, count)) => {
                summary.images += 1;
                summary.boxes += count;
            }
            Err(err) => {
                eprintln!("warning: skipping {}: {err}", path.display());
                summary.skipped.push(path.display().to_string());
            }
        }
    }
    Ok(summary)
}

/// Produce final label files: a correction file replaces the candidates for
/// its image entirely; otherwise candidates at or above `accept_thresh`
/// survive with the confidence column stripped.
pub fn merge_corrections(
    candidate_dir: &Path,
    correction_dir: &Path,
    accept_thresh: f64,
    out_dir: &Path,
) -> Result<usize> {
    fs::create_dir_all(out_dir)?;

    let list_ids = |dir: &Path| -> Result<Vec<String>> {
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        Ok(ids)
    };

    let mut ids = list_ids(candidate_dir)?;
    for id in list_ids(correction_dir)? {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids.sort();

    let mut written = 0usize;
    for id in &ids {
        let correction = correction_dir.join(format!("{id}.txt"));
        let out_path = out_dir.join(format!("{id}.txt"));
        let final_set = if correction.exists() {
            // Corrections are ground truth and must parse as plain labels.
            parse_label_file(&correction, false)?
        } else {
            let candidates = parse_label_file(&candidate_dir.join(format!("{id}.txt")), true)?;
            LabelSet {
                image_id: id.clone(),
                entries: candidates
                    .entries
                    .into_iter()
                    .filter(|e| e.confidence.unwrap_or(0.0) >= accept_thresh)
                    .map(|e| LabelEntry {
                        confidence: None,
                        ..e
                    })
                    .collect(),
            }
        };
        write_label_file(&final_set, &out_path, false)?;
        written += 1;
    }
    Ok(written)
}
