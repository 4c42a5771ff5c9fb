//! Raw head outputs to pixel-space detections.

use crate::autodiff::loss::sigmoid;
use crate::error::Result;
use crate::geometry::{nms, AbsBox, Detection};
use crate::imagebuf::ImageBuf;
use crate::tensor::{Real, Tensor};

use super::weights::WeightSet;
use super::DetectorConfig;

/// One head's output: objectness and category planes as logits, distance
/// planes softplus-activated in pixels. Layout (1 + K + 4, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct HeadRaw<T> {
    pub stride: usize,
    pub planes: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawPredictions<T> {
    pub heads: Vec<HeadRaw<T>>,
}

/// Per cell: center at ((col + 0.5) s, (row + 0.5) s), box spanned by the
/// four edge distances, clamped to the image; score is
/// sigmoid(obj) * max_k sigmoid(cls_k). Cells at or above the confidence
/// threshold survive to NMS.
pub fn decode<T: Real>(
    preds: &RawPredictions<T>,
    config: &DetectorConfig,
    image_size: (f64, f64),
) -> Vec<Detection> {
    let k = config.num_categories;
    let (img_w, img_h) = image_size;
    let mut dets = Vec::new();
    for head in &preds.heads {
        let (planes, h, w) = head.planes.dims3();
        debug_assert_eq!(planes, config.head_planes());
        let s = head.stride as f64;
        for row in 0..h {
            for col in 0..w {
                let obj = sigmoid(head.planes.at3(0, row, col).as_f64());
                let (best_cat, best_cls) = (0..k)
                    .map(|c| (c, sigmoid(head.planes.at3(1 + c, row, col).as_f64())))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                let score = obj * best_cls;
                if score < config.conf_thresh {
                    continue;
                }
                let ccx = (col as f64 + 0.5) * s;
                let ccy = (row as f64 + 0.5) * s;
                let dl = head.planes.at3(1 + k, row, col).as_f64();
                let dt = head.planes.at3(2 + k, row, col).as_f64();
                let dr = head.planes.at3(3 + k, row, col).as_f64();
                let db = head.planes.at3(4 + k, row, col).as_f64();
                let x0 = (ccx - dl).clamp(0.0, img_w);
                let y0 = (ccy - dt).clamp(0.0, img_h);
                let x1 = (ccx + dr).clamp(0.0, img_w);
                let y1 = (ccy + db).clamp(0.0, img_h);
                if x0 >= x1 || y0 >= y1 {
                    continue;
                }
                dets.push(Detection::new(
                    AbsBox {
                        x0,
                        y0,
                        x1,
                        y1,
                    },
                    score,
                    best_cat as u32,
                ));
            }
        }
    }
    nms(&dets, config.nms_iou)
}

/// Forward + decode on one image. Images that are not already at the
/// network input size are bilinearly resized first and the detections mapped
/// back to the original pixel space.
pub fn predict(
    image: &ImageBuf,
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
) -> Result<Vec<Detection>> {
    let s = config.input_size;
    let (orig_w, orig_h) = (image.width(), image.height());
    let tensor = if (orig_w, orig_h) == (s, s) {
        image.to_tensor()
    } else {
        resize(image, s, s).to_tensor()
    };
    let preds = super::forward(&tensor, weights, config)?;
    let mut dets = decode(&preds, config, (s as f64, s as f64));
    if (orig_w, orig_h) != (s, s) {
        let fx = orig_w as f64 / s as f64;
        let fy = orig_h as f64 / s as f64;
        for d in &mut dets {
            d.bbox.x0 *= fx;
            d.bbox.x1 *= fx;
            d.bbox.y0 *= fy;
            d.bbox.y1 *= fy;
        }
    }
    Ok(dets)
}

fn resize(image: &ImageBuf, w: u32, h: u32) -> ImageBuf {
    let mut out = ImageBuf::new(w, h);
    let sx = image.width() as f32 / w as f32;
    let sy = image.height() as f32 / h as f32;
    for y in 0..h {
        for x in 0..w {
            let u = (x as f32 + 0.5) * sx - 0.5;
            let v = (y as f32 + 0.5) * sy - 0.5;
            for c in 0..3 {
                out.set(c, x, y, image.sample_clamped(c, u, v));
            }
        }
    }
    out
}
