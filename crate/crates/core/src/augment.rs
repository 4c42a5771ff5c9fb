//! The five training-set transforms (mirror flip, rotation, random crop,
//! saturation, brightness) with matching box geometry, plus dataset-level
//! expansion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    image_path_for, label_path_for, parse_label_file, write_label_file, ImageRecord, LabelEntry,
    LabelSet, Manifest, Split,
};
use crate::error::{Error, Result};
use crate::geometry::{clip_box, NormBox};
use crate::imagebuf::ImageBuf;
use crate::parallel::map_with_workers;
use crate::rng::{derive_seed, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub copies_per_image: usize,
    /// Rotation sampled from U(-rotation_range, +rotation_range) degrees.
    pub rotation_range: f64,
    /// Crop side fraction range, both ends in (0, 1].
    pub crop_scale_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            copies_per_image: 2,
            rotation_range: 15.0,
            crop_scale_range: (0.7, 1.0),
            saturation_range: (0.6, 1.4),
            brightness_range: (0.6, 1.4),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop scale range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if !(0.0..=45.0).contains(&self.rotation_range) {
            return Err(Error::InvalidArgument(format!(
                "rotation range {} must be within [0, 45] degrees",
                self.rotation_range
            )));
        }
        for (name, (a, b)) in [
            ("saturation", self.saturation_range),
            ("brightness", self.brightness_range),
        ] {
            if !(a > 0.0 && b >= a) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range ({a}, {b}) must be positive and ordered"
                )));
            }
        }
        Ok(())
    }
}

// ---- box geometry -------------------------------------------------------

pub fn hflip_box(b: &NormBox) -> NormBox {
    NormBox {
        cx: 1.0 - b.cx,
        cy: b.cy,
        w: b.w,
        h: b.h,
    }
}

/// Axis-aligned hull of the box corners rotated by `angle_deg` about the
/// image center, clipped to frame. `None` when too little area survives.
pub fn rotate_box(b: &NormBox, angle_deg: f64, width: f64, height: f64) -> Option<NormBox> {
    if angle_deg == 0.0 {
        return Some(*b);
    }
    let (cx, cy) = (width / 2.0, height / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    let (x0, y0, x1, y1) = b.corners();
    let corners_px = [
        (x0 * width, y0 * height),
        (x1 * width, y0 * height),
        (x0 * width, y1 * height),
        (x1 * width, y1 * height),
    ];
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for (px, py) in corners_px {
        let dx = px - cx;
        let dy = py - cy;
        let rx = cos * dx - sin * dy + cx;
        let ry = sin * dx + cos * dy + cy;
        min_x = min_x.min(rx);
        max_x = max_x.max(rx);
        min_y = min_y.min(ry);
        max_y = max_y.max(ry);
    }
    clip_box(&NormBox {
        cx: (min_x + max_x) / 2.0 / width,
        cy: (min_y + max_y) / 2.0 / height,
        w: (max_x - min_x) / width,
        h: (max_y - min_y) / height,
    })
}

/// Remap a box into the crop window (ox, oy, ox+s, oy+s) and clip.
pub fn crop_box(b: &NormBox, ox: f64, oy: f64, s: f64) -> Option<NormBox> {
    if s >= 1.0 {
        return Some(*b);
    }
    clip_box(&NormBox {
        cx: (b.cx - ox) / s,
        cy: (b.cy - oy) / s,
        w: b.w / s,
        h: b.h / s,
    })
}

// ---- pixel transforms ---------------------------------------------------

/// Mirror about the vertical axis; boxes get cx -> 1 - cx.
pub fn hflip(image: &ImageBuf, boxes: &[NormBox]) -> (ImageBuf, Vec<NormBox>) {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, x, y, image.get(c, w - 1 - x, y));
            }
        }
    }
    (out, boxes.iter().map(hflip_box).collect())
}

/// Rotate about the image center with bilinear sampling; exposed borders are
/// filled by edge replication. Boxes become the axis-aligned hull of their
/// rotated corners; boxes losing too much area to the frame are dropped.
pub fn rotate(image: &ImageBuf, boxes: &[NormBox], angle_deg: f64) -> (ImageBuf, Vec<NormBox>) {
    if angle_deg == 0.0 {
        return (image.clone(), boxes.to_vec());
    }
    let (w, h) = (image.width(), image.height());
    let (wf, hf) = (w as f64, h as f64);
    let (cx, cy) = (wf / 2.0, hf / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());

    let mut out = ImageBuf::new(w, h);
    // Inverse map: output pixel center -> input coordinates.
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5) - cx;
            let dy = (y as f64 + 0.5) - cy;
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            for c in 0..3 {
                out.set(c, x, y, image.sample_clamped(c, sx as f32, sy as f32));
            }
        }
    }
    let kept = boxes
        .iter()
        .filter_map(|b| rotate_box(b, angle_deg, wf, hf))
        .collect();
    (out, kept)
}

/// Crop a window whose side fraction and position come from the stream, then
/// resize back to the original resolution.
pub fn random_crop(
    image: &ImageBuf,
    boxes: &[NormBox],
    scale_range: (f64, f64),
    rng: &mut Stream,
) -> (ImageBuf, Vec<NormBox>) {
    let s = rng.range_f64(scale_range.0, scale_range.1);
    let ox = rng.range_f64(0.0, 1.0 - s);
    let oy = rng.range_f64(0.0, 1.0 - s);
    crop_resize(image, boxes, ox, oy, s)
}

/// Deterministic core of `random_crop`.
pub fn crop_resize(
    image: &ImageBuf,
    boxes: &[NormBox],
    ox: f64,
    oy: f64,
    s: f64,
) -> (ImageBuf, Vec<NormBox>) {
    if s >= 1.0 {
        return (image.clone(), boxes.to_vec());
    }
    let (w, h) = (image.width(), image.height());
    let mut out = ImageBuf::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Output pixel center mapped into the crop window.
            let u = (ox + s * (x as f64 + 0.5) / w as f64) * w as f64 - 0.5;
            let v = (oy + s * (y as f64 + 0.5) / h as f64) * h as f64 - 0.5;
            for c in 0..3 {
                out.set(c, x, y, image.sample_clamped(c, u as f32, v as f32));
            }
        }
    }
    let kept = boxes.iter().filter_map(|b| crop_box(b, ox, oy, s)).collect();
    (out, kept)
}

/// Interpolate between per-pixel luma (factor 0) and the original (factor 1).
pub fn adjust_saturation(image: &ImageBuf, factor: f64) -> ImageBuf {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    let f = factor as f32;
    for y in 0..h {
        for x in 0..w {
            let r = image.get(0, x, y);
            let g = image.get(1, x, y);
            let b = image.get(2, x, y);
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            out.set(0, x, y, (luma + f * (r - luma)).clamp(0.0, 1.0));
            out.set(1, x, y, (luma + f * (g - luma)).clamp(0.0, 1.0));
            out.set(2, x, y, (luma + f * (b - luma)).clamp(0.0, 1.0));
        }
    }
    out
}

/// Per-pixel multiply, clamped to [0, 1].
pub fn adjust_brightness(image: &ImageBuf, factor: f64) -> ImageBuf {
    let f = factor as f32;
    let mut out = image.clone();
    for v in out.pixels_mut() {
        *v = (*v * f).clamp(0.0, 1.0);
    }
    out
}

// ---- dataset expansion --------------------------------------------------

/// Parameters for one augmented copy, all drawn from a stream derived from
/// (seed, image id, copy index) so parallel order cannot change results.
#[derive(Clone, Copy, Debug)]
struct DrawnParams {
    flip: bool,
    angle: f64,
    crop: (f64, f64, f64),
    saturation: f64,
    brightness: f64,
}

fn draw_params(spec: &AugmentSpec, image_id: &str, copy: usize) -> DrawnParams {
    let mut rng = Stream::new(derive_seed(spec.seed, &format!("aug/{image_id}/{copy}")));
    let flip = rng.coin(0.5);
    let angle = rng.range_f64(-spec.rotation_range, spec.rotation_range);
    let s = rng.range_f64(spec.crop_scale_range.0, spec.crop_scale_range.1);
    let ox = rng.range_f64(0.0, 1.0 - s);
    let oy = rng.range_f64(0.0, 1.0 - s);
    let saturation = rng.range_f64(spec.saturation_range.0, spec.saturation_range.1);
    let brightness = rng.range_f64(spec.brightness_range.0, spec.brightness_range.1);
    DrawnParams {
        flip,
        angle,
        crop: (ox, oy, s),
        saturation,
        brightness,
    }
}

/// One augmented variant of an image with its labels.
pub fn augment_once(
    image: &ImageBuf,
    entries: &[LabelEntry],
    spec: &AugmentSpec,
    image_id: &str,
    copy: usize,
) -> (ImageBuf, Vec<LabelEntry>) {
    let p = draw_params(spec, image_id, copy);
    let (wf, hf) = (image.width() as f64, image.height() as f64);

    let mut img = if p.flip {
        hflip(image, &[]).0
    } else {
        image.clone()
    };
    img = rotate(&img, &[], p.angle).0;
    img = crop_resize(&img, &[], p.crop.0, p.crop.1, p.crop.2).0;
    img = adjust_saturation(&img, p.saturation);
    img = adjust_brightness(&img, p.brightness);

    let mut out_entries = Vec::new();
    for e in entries {
        let b = if p.flip { hflip_box(&e.bbox) } else { e.bbox };
        let Some(b) = rotate_box(&b, p.angle, wf, hf) else {
            continue;
        };
        let Some(b) = crop_box(&b, p.crop.0, p.crop.1, p.crop.2) else {
            continue;
        };
        out_entries.push(LabelEntry {
            category_id: e.category_id,
            bbox: b,
            confidence: None,
        });
    }
    (img, out_entries)
}

/// Expand the train split on disk. Augmented images land beside their
/// originals as `<id>_augK.png` with matching label files; the returned
/// manifest appends the new records. Val and test are never touched.
pub fn augment_dataset(
    manifest: &Manifest,
    manifest_path: &Path,
    spec: &AugmentSpec,
    workers: usize,
) -> Result<Manifest> {
    spec.validate()?;
    if spec.copies_per_image == 0 {
        return Ok(manifest.clone());
    }

    let mut jobs = Vec::new();
    for rec in manifest.images.iter().filter(|r| r.split == Split::Train) {
        for copy in 0..spec.copies_per_image {
            jobs.push((rec.clone(), copy));
        }
    }

    let results: Vec<Result<ImageRecord>> = map_with_workers(workers, &jobs, |(rec, copy)| {
        augment_one_to_disk(rec, *copy, manifest_path, spec)
    });

    let mut out = manifest.clone();
    for r in results {
        out.images.push(r?);
    }
    out.validate()?;
    Ok(out)
}

fn augment_one_to_disk(
    rec: &ImageRecord,
    copy: usize,
    manifest_path: &Path,
    spec: &AugmentSpec,
) -> Result<ImageRecord> {
    let img_path = image_path_for(manifest_path, rec);
    let image = ImageBuf::load(&img_path)?;
    let labels = parse_label_file(&label_path_for(manifest_path, &rec.id), false)?;

    let (aug_img, aug_entries) = augment_once(&image, &labels.entries, spec, &rec.id, copy);

    let new_id = format!("{}_aug{copy}", rec.id);
    let new_rel = match rec.path.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_aug{copy}.{ext}"),
        None => format!("{}_aug{copy}", rec.path),
    };

    let new_rec = ImageRecord {
        id: new_id.clone(),
        path: new_rel,
        camera: rec.camera,
        split: Split::Train,
        width: rec.width,
        height: rec.height,
    };
    aug_img.save_png(&image_path_for(manifest_path, &new_rec))?;
    write_label_file(
        &LabelSet {
            image_id: new_id.clone(),
            entries: aug_entries,
        },
        &label_path_for(manifest_path, &new_id),
        false,
    )?;
    Ok(new_rec)
}
