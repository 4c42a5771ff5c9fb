//! Desk-scale synthetic dataset: textured ellipse "animals" over noise
//! backgrounds, with optional distractors, occluders and shadow bands so the
//! attention experiments have clutter to discriminate.
//!
//! Everything is a pure function of (n, clutter, seed): same inputs, byte
//! identical images, labels and sidecars.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    label_path_for, write_label_file, CameraTag, Environment, ImageRecord, LabelEntry, LabelSet,
    Manifest, Split,
};
use crate::error::{Error, Result};
use crate::geometry::{clip_box, iou, norm_to_abs, NormBox};
use crate::imagebuf::ImageBuf;
use crate::rng::{derive_seed, Stream};

/// Record of every primitive drawn into a synthetic image; written as a
/// `<id>.prov.json` sidecar so tests can assert on generator behavior.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub camera: String,
    pub animals: Vec<AnimalPrim>,
    pub distractors: Vec<DistractorPrim>,
    pub shadows: Vec<ShadowPrim>,
    pub occluders: Vec<OccluderPrim>,
    pub brightness: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnimalPrim {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistractorPrim {
    pub kind: String,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowPrim {
    pub offset: f64,
    pub width: f64,
    pub strength: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccluderPrim {
    pub x: f64,
    pub w: f64,
}

pub struct GenOptions {
    pub n: usize,
    pub clutter: f64,
    pub seed: u64,
    pub size: u32,
}

impl GenOptions {
    pub fn new(n: usize, clutter: f64, seed: u64) -> Self {
        Self {
            n,
            clutter,
            seed,
            size: 128,
        }
    }
}

/// Generate `n` images with labels, provenance sidecars and a manifest under
/// `out_dir` (`images/`, `labels/`, `prov/`, `manifest.json`).
pub fn gen_synthetic(opts: &GenOptions, out_dir: &Path) -> Result<Manifest> {
    if opts.n == 0 {
        return Err(Error::InvalidArgument("need at least one image".into()));
    }
    if !(0.0..=1.0).contains(&opts.clutter) {
        return Err(Error::InvalidArgument(format!(
            "clutter {} outside [0, 1]",
            opts.clutter
        )));
    }
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("labels"))?;
    fs::create_dir_all(out_dir.join("prov"))?;
    let manifest_path = out_dir.join("manifest.json");

    let mut records = Vec::with_capacity(opts.n);
    for index in 0..opts.n {
        let id = format!("img_{index:06}");
        let camera = CameraTag::ALL[index % CameraTag::ALL.len()];
        let (image, labels, prov) = render_image(opts, &id, index, camera);

        image.save_png(&out_dir.join("images").join(format!("{id}.png")))?;
        write_label_file(&labels, &label_path_for(&manifest_path, &id), false)?;
        let mut prov_json = serde_json::to_string_pretty(&prov)?;
        prov_json.push('\n');
        fs::write(out_dir.join("prov").join(format!("{id}.prov.json")), prov_json)?;

        records.push(ImageRecord {
            id,
            path: format!("images/img_{index:06}.png"),
            camera,
            split: Split::Unassigned,
            width: opts.size,
            height: opts.size,
        });
    }
    let manifest = Manifest::new(records)?;
    Ok(manifest)
}

fn render_image(
    opts: &GenOptions,
    id: &str,
    index: usize,
    camera: CameraTag,
) -> (ImageBuf, LabelSet, Provenance) {
    let mut rng = Stream::new(derive_seed(opts.seed, &format!("synth/{index}")));
    let size = opts.size;
    let sf = size as f64;
    let clutter = opts.clutter;

    let mut prov = Provenance {
        id: id.to_string(),
        camera: camera.to_string(),
        ..Default::default()
    };

    // Background palette differs indoors/outdoors so per-camera reports see
    // distinct conditions.
    let (base, tint) = match camera.environment() {
        Environment::Indoor => ([0.45f32, 0.40, 0.36], [0.05f32, 0.04, 0.03]),
        Environment::Outdoor => ([0.38f32, 0.48, 0.33], [0.04f32, 0.06, 0.04]),
    };
    let mut img = ImageBuf::new(size, size);
    // Low-frequency lighting gradient plus per-pixel noise.
    let gx = rng.range_f64(-0.15, 0.15) as f32;
    let gy = rng.range_f64(-0.15, 0.15) as f32;
    let noise_amp = (0.04 + 0.08 * clutter) as f32;
    for y in 0..size {
        for x in 0..size {
            let fx = x as f32 / size as f32;
            let fy = y as f32 / size as f32;
            let grad = gx * (fx - 0.5) + gy * (fy - 0.5);
            for c in 0..3 {
                let n = (rng.uniform() as f32 - 0.5) * 2.0 * noise_amp;
                let v = base[c] + tint[c] * ((fx * 9.0).sin() + (fy * 7.0).cos()) + grad + n;
                img.set(c, x, y, v.clamp(0.0, 1.0));
            }
        }
    }

    // Animals: 1-5 textured ellipses, rejection-sampled so ground-truth boxes
    // stay mostly visible and do not overlap heavily.
    let count = rng.range_usize(1, 5);
    let mut animals: Vec<(f64, f64, f64, f64, f64, NormBox)> = Vec::new();
    let mut placed_boxes: Vec<NormBox> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..20 {
            let a = rng.range_f64(11.0, 26.0);
            let b = rng.range_f64(0.65 * a, a);
            let theta = rng.range_f64(0.0, std::f64::consts::PI);
            let cx = rng.range_f64(0.12 * sf, 0.88 * sf);
            let cy = rng.range_f64(0.12 * sf, 0.88 * sf);
            let (sin, cos) = (theta.sin(), theta.cos());
            let ex = (a * a * cos * cos + b * b * sin * sin).sqrt();
            let ey = (a * a * sin * sin + b * b * cos * cos).sqrt();
            let raw = NormBox {
                cx: cx / sf,
                cy: cy / sf,
                w: 2.0 * ex / sf,
                h: 2.0 * ey / sf,
            };
            let Some(bbox) = clip_box(&raw) else { continue };
            let heavy_overlap = placed_boxes.iter().any(|pb| {
                let a1 = norm_to_abs(&bbox, size, size).unwrap();
                let a2 = norm_to_abs(pb, size, size).unwrap();
                iou(&a1, &a2).unwrap_or(1.0) > 0.25
            });
            if heavy_overlap {
                continue;
            }
            placed_boxes.push(bbox);
            animals.push((cx, cy, a, b, theta, bbox));
            break;
        }
    }
    // Guarantee at least one animal even if rejection sampling starved.
    if animals.is_empty() {
        let (cx, cy, a, b, theta): (f64, f64, f64, f64, f64) = (sf / 2.0, sf / 2.0, 20.0, 14.0, 0.3);
        let (sin, cos) = (theta.sin(), theta.cos());
        let ex = (a * a * cos * cos + b * b * sin * sin).sqrt();
        let ey = (a * a * sin * sin + b * b * cos * cos).sqrt();
        let bbox = clip_box(&NormBox {
            cx: cx / sf,
            cy: cy / sf,
            w: 2.0 * ex / sf,
            h: 2.0 * ey / sf,
        })
        .expect("centered default animal is visible");
        animals.push((cx, cy, a, b, theta, bbox));
        placed_boxes.push(bbox);
    }

    // Coat colors: dark body with lighter patches, or the reverse.
    for &(cx, cy, a, b, theta, bbox) in &animals {
        let dark = rng.coin(0.5);
        let body: [f32; 3] = if dark {
            [0.12, 0.10, 0.09]
        } else {
            [0.82, 0.80, 0.76]
        };
        let patch: [f32; 3] = if dark {
            [0.75, 0.72, 0.68]
        } else {
            [0.15, 0.12, 0.10]
        };
        let pf1 = rng.range_f64(0.25, 0.6);
        let pf2 = rng.range_f64(0.25, 0.6);
        let ph1 = rng.range_f64(0.0, std::f64::consts::TAU);
        let ph2 = rng.range_f64(0.0, std::f64::consts::TAU);
        let (sin, cos) = (theta.sin(), theta.cos());
        let x_lo = ((cx - a).floor().max(0.0)) as u32;
        let x_hi = ((cx + a).ceil().min(sf - 1.0)) as u32;
        let y_lo = ((cy - a).floor().max(0.0)) as u32;
        let y_hi = ((cy + a).ceil().min(sf - 1.0)) as u32;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let dx = px as f64 + 0.5 - cx;
                let dy = py as f64 + 0.5 - cy;
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let r2 = (u / a) * (u / a) + (v / b) * (v / b);
                if r2 <= 1.0 {
                    let shade = (1.0 - 0.25 * r2) as f32;
                    let patchy = ((u * pf1 + ph1).sin() * (v * pf2 + ph2).sin()) > 0.15;
                    let color = if patchy { patch } else { body };
                    for c in 0..3 {
                        img.set(c, px, py, (color[c] * shade).clamp(0.0, 1.0));
                    }
                }
            }
        }
        prov.animals.push(AnimalPrim {
            cx,
            cy,
            a,
            b,
            theta,
            bbox: [bbox.cx, bbox.cy, bbox.w, bbox.h],
        });
    }

    // Clutter: distractor blobs and rocks that are NOT labeled.
    let n_distract = (clutter * 6.0).round() as usize;
    for _ in 0..n_distract {
        let kind = if rng.coin(0.5) { "rock" } else { "post" };
        let dcx = rng.range_f64(0.05 * sf, 0.95 * sf);
        let dcy = rng.range_f64(0.05 * sf, 0.95 * sf);
        let dsize = rng.range_f64(3.0, 9.0);
        let grey = rng.range_f64(0.2, 0.8) as f32;
        let color = [grey, grey * 0.95, grey * 0.9];
        if kind == "rock" {
            for py in 0..size {
                for px in 0..size {
                    let dx = px as f64 + 0.5 - dcx;
                    let dy = py as f64 + 0.5 - dcy;
                    if dx * dx + dy * dy <= dsize * dsize {
                        for c in 0..3 {
                            img.set(c, px, py, color[c]);
                        }
                    }
                }
            }
        } else {
            // Vertical post.
            let x_lo = (dcx - dsize / 3.0).max(0.0) as u32;
            let x_hi = ((dcx + dsize / 3.0).min(sf - 1.0)) as u32;
            for py in 0..size {
                for px in x_lo..=x_hi {
                    for c in 0..3 {
                        img.set(c, px, py, color[c]);
                    }
                }
            }
        }
        prov.distractors.push(DistractorPrim {
            kind: kind.to_string(),
            cx: dcx,
            cy: dcy,
            size: dsize,
        });
    }

    // Shadow bands: diagonal darkened stripes.
    let n_shadow = (clutter * 3.0).round() as usize;
    for _ in 0..n_shadow {
        let offset = rng.range_f64(-0.5 * sf, 1.5 * sf);
        let width = rng.range_f64(6.0, 18.0);
        let strength = rng.range_f64(0.2, 0.45);
        for py in 0..size {
            for px in 0..size {
                let d = (px as f64 + py as f64 * 0.5) - offset;
                if d.abs() < width {
                    for c in 0..3 {
                        let v = img.get(c, px, py) * (1.0 - strength as f32);
                        img.set(c, px, py, v);
                    }
                }
            }
        }
        prov.shadows.push(ShadowPrim {
            offset,
            width,
            strength,
        });
    }

    // Occluders: vertical fence bars over animals.
    let n_occ = (clutter * 2.0).round() as usize;
    for _ in 0..n_occ {
        if animals.is_empty() {
            break;
        }
        let target = &animals[rng.below(animals.len())];
        let bar_w = rng.range_f64(2.0, 5.0);
        let bar_x = target.0 + rng.range_f64(-target.2 * 0.6, target.2 * 0.6);
        let x_lo = (bar_x - bar_w / 2.0).max(0.0) as u32;
        let x_hi = ((bar_x + bar_w / 2.0).min(sf - 1.0)) as u32;
        let bar_col = [0.32f32, 0.28, 0.22];
        for py in 0..size {
            for px in x_lo..=x_hi {
                for c in 0..3 {
                    img.set(c, px, py, bar_col[c]);
                }
            }
        }
        prov.occluders.push(OccluderPrim {
            x: bar_x,
            w: bar_w,
        });
    }

    // Global brightness jitter grows with clutter.
    let bright = 1.0 + rng.range_f64(-0.2, 0.2) * clutter;
    for v in img.pixels_mut() {
        *v = (*v * bright as f32).clamp(0.0, 1.0);
    }
    prov.brightness = bright;

    let labels = LabelSet {
        image_id: id.to_string(),
        entries: placed_boxes
            .iter()
            .map(|b| LabelEntry {
                category_id: 0,
                bbox: *b,
                confidence: None,
            })
            .collect(),
    };
    (img, labels, prov)
}
