//! Plain-text label files: one box per line, `category cx cy w h`, with an
//! optional trailing confidence column on candidate files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::NormBox;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelEntry {
    pub category_id: u32,
    pub bbox: NormBox,
    /// Present only in candidate files produced by the annotation bootstrap.
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub image_id: String,
    pub entries: Vec<LabelEntry>,
}

impl LabelSet {
    pub fn empty(image_id: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn boxes(&self) -> impl Iterator<Item = (u32, &NormBox)> {
        self.entries.iter().map(|e| (e.category_id, &e.bbox))
    }
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    what: &str,
    path: &Path,
    line_no: usize,
) -> Result<T> {
    field.parse::<T>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: format!("invalid {what} {field:?}"),
    })
}

/// Parse a label file. An empty file is a valid image with no boxes.
pub fn parse_label_file(path: &Path, has_confidence: bool) -> Result<LabelSet> {
    let text = fs::read_to_string(path)?;
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = if has_confidence { 6 } else { 5 };
        if fields.len() != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let category_id: u32 = parse_field(fields[0], "category", path, line_no)?;
        let cx: f64 = parse_field(fields[1], "coordinate", path, line_no)?;
        let cy: f64 = parse_field(fields[2], "coordinate", path, line_no)?;
        let w: f64 = parse_field(fields[3], "coordinate", path, line_no)?;
        let h: f64 = parse_field(fields[4], "coordinate", path, line_no)?;
        let bbox = NormBox::new(cx, cy, w, h).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("coordinate out of range, line {line_no}"),
        })?;
        let confidence = if has_confidence {
            let c: f64 = parse_field(fields[5], "confidence", path, line_no)?;
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("confidence out of range, line {line_no}"),
                });
            }
            Some(c)
        } else {
            None
        };
        entries.push(LabelEntry {
            category_id,
            bbox,
            confidence,
        });
    }
    Ok(LabelSet { image_id, entries })
}

/// Write a label file with 6-decimal coordinates, newline-terminated.
pub fn write_label_file(labels: &LabelSet, path: &Path, with_confidence: bool) -> Result<()> {
    let mut out = String::new();
    for e in &labels.entries {
        e.bbox.validate()?;
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}",
            e.category_id, e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h
        ));
        if with_confidence {
            let c = e.confidence.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "entry in {:?} has no confidence to write",
                    labels.image_id
                ))
            })?;
            out.push_str(&format!(" {c:.6}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
