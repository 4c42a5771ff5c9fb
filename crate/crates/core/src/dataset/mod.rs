//! Dataset catalog: manifests with per-image camera tags and split
//! assignments, plus the plain-text label format shared by ground truth,
//! model candidates, and human corrections.

mod annotate;
mod labels;
mod split;
pub mod synthetic;

pub use annotate::{annotate_candidates, merge_corrections, AnnotateSummary};
pub use labels::{parse_label_file, write_label_file, LabelEntry, LabelSet};
pub use split::{split, SplitRatios};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six capture conditions of the farm dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CameraTag {
    IW,
    IP,
    IC,
    OP,
    OE,
    OC,
}

impl CameraTag {
    pub const ALL: [CameraTag; 6] = [
        CameraTag::IW,
        CameraTag::IP,
        CameraTag::IC,
        CameraTag::OP,
        CameraTag::OE,
        CameraTag::OC,
    ];

    pub fn environment(self) -> Environment {
        match self {
            CameraTag::IW | CameraTag::IP | CameraTag::IC => Environment::Indoor,
            CameraTag::OP | CameraTag::OE | CameraTag::OC => Environment::Outdoor,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "IW" => Ok(CameraTag::IW),
            "IP" => Ok(CameraTag::IP),
            "IC" => Ok(CameraTag::IC),
            "OP" => Ok(CameraTag::OP),
            "OE" => Ok(CameraTag::OE),
            "OC" => Ok(CameraTag::OC),
            other => Err(Error::InvalidCameraTag(other.to_string())),
        }
    }
}

impl fmt::Display for CameraTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CameraTag::IW => "IW",
            CameraTag::IP => "IP",
            CameraTag::IC => "IC",
            CameraTag::OP => "OP",
            CameraTag::OE => "OE",
            CameraTag::OC => "OC",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Environment {
    Indoor,
    Outdoor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        };
        f.write_str(s)
    }
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?} (expected train, val, test, or unassigned)"
            ))),
        }
    }
}

/// One catalogued image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    /// Image path, relative to the manifest's directory.
    pub path: String,
    pub camera: CameraTag,
    pub split: Split,
    pub width: u32,
    pub height: u32,
}

/// Versioned image catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub images: Vec<ImageRecord>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl Manifest {
    pub fn new(images: Vec<ImageRecord>) -> Result<Self> {
        let m = Self {
            version: MANIFEST_VERSION,
            images,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for rec in &self.images {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::DuplicateImageId(rec.id.clone()));
            }
            if rec.path.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "image {:?} has an empty path",
                    rec.id
                )));
            }
            if rec.width == 0 || rec.height == 0 {
                return Err(Error::InvalidArgument(format!(
                    "image {:?} has zero dimensions",
                    rec.id
                )));
            }
        }
        Ok(())
    }

    pub fn split_ids(&self, split: Split) -> Vec<&ImageRecord> {
        self.images.iter().filter(|r| r.split == split).collect()
    }
}

/// Load a manifest, rejecting unknown fields and duplicate ids.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Directory layout convention around a manifest: `images/` and `labels/`
/// siblings, label file name = image id + ".txt".
pub fn label_path_for(manifest_path: &Path, image_id: &str) -> PathBuf {
    manifest_dir(manifest_path).join("labels").join(format!("{image_id}.txt"))
}

pub fn image_path_for(manifest_path: &Path, record: &ImageRecord) -> PathBuf {
    manifest_dir(manifest_path).join(&record.path)
}

fn manifest_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, camera: CameraTag) -> ImageRecord {
        ImageRecord {
            id: id.to_string(),
            path: format!("images/{id}.png"),
            camera,
            split: Split::Unassigned,
            width: 128,
            height: 128,
        }
    }

    #[test]
    fn manifest_round_trip_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest::new(vec![
            record("a", CameraTag::IW),
            record("b", CameraTag::OC),
        ])
        .unwrap();
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let result = Manifest::new(vec![record("a", CameraTag::IW), record("a", CameraTag::IP)]);
        assert!(matches!(result, Err(Error::DuplicateImageId(id)) if id == "a"));
    }

    #[test]
    fn unknown_camera_tag_is_rejected_with_its_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{"version":1,"images":[{"id":"a","path":"images/a.png","camera":"XX","split":"train","width":1,"height":1}]}"#;
        std::fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("XX"), "error was: {err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{"version":1,"images":[],"extra":true}"#;
        std::fs::write(&path, text).unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn camera_environments_follow_the_tag_prefix() {
        use CameraTag::*;
        for tag in [IW, IP, IC] {
            assert_eq!(tag.environment(), Environment::Indoor);
        }
        for tag in [OP, OE, OC] {
            assert_eq!(tag.environment(), Environment::Outdoor);
        }
    }
}
