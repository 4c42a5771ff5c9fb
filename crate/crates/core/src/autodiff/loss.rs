//! Detection loss as a single fused tape operation.
//!
//! Inputs are the raw head planes (1 + K + 4, H, W) per stride. The loss is
//!   lambda_obj * mean over all cells of BCE(sigmoid(obj), obj_target)
//! + lambda_box * mean over positive cells of (1 - IoU(pred box, gt box))
//! + lambda_cls * mean over positive cells of BCE(sigmoid(cls), one-hot)
//! with the box built from softplus-activated, stride-scaled edge distances
//! around the cell center. With no positives the box and cls terms are zero.

use crate::tensor::{Real, Tensor};

/// Per-head constant targets.
#[derive(Clone, Debug)]
pub struct HeadTargets {
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    /// Objectness target per cell, row-major, 0.0 or 1.0.
    pub obj: Vec<f64>,
    pub positives: Vec<PositiveCell>,
}

#[derive(Clone, Debug)]
pub struct PositiveCell {
    pub row: usize,
    pub col: usize,
    pub category_id: usize,
    /// Ground-truth corners in pixels: x0, y0, x1, y1.
    pub gt: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct LossCtx {
    pub lambda_obj: f64,
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub num_categories: usize,
    pub heads: Vec<HeadTargets>,
}

/// Unweighted mean terms, exposed for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub obj: f64,
    pub bbox: f64,
    pub cls: f64,
}

#[inline]
pub fn bce_with_logits<T: Real>(x: T, t: T) -> T {
    // max(x, 0) - x*t + ln(1 + exp(-|x|))
    x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

struct PredBox<T> {
    x0: T,
    y0: T,
    x1: T,
    y1: T,
}

fn pred_box<T: Real>(head: &Tensor<T>, ctx_head: &HeadTargets, k: usize, pos: &PositiveCell) -> PredBox<T> {
    let stride = T::from_f64(ctx_head.stride as f64);
    let half = T::from_f64(0.5);
    let ccx = (T::from_f64(pos.col as f64) + half) * stride;
    let ccy = (T::from_f64(pos.row as f64) + half) * stride;
    let dl = softplus(head.at3(1 + k, pos.row, pos.col)) * stride;
    let dt = softplus(head.at3(2 + k, pos.row, pos.col)) * stride;
    let dr = softplus(head.at3(3 + k, pos.row, pos.col)) * stride;
    let db = softplus(head.at3(4 + k, pos.row, pos.col)) * stride;
    PredBox {
        x0: ccx - dl,
        y0: ccy - dt,
        x1: ccx + dr,
        y1: ccy + db,
    }
}

fn iou_parts<T: Real>(p: &PredBox<T>, gt: &[f64; 4]) -> (T, T, T, T) {
    let gx0 = T::from_f64(gt[0]);
    let gy0 = T::from_f64(gt[1]);
    let gx1 = T::from_f64(gt[2]);
    let gy1 = T::from_f64(gt[3]);
    let iw = (p.x1.min(gx1) - p.x0.max(gx0)).max(T::zero());
    let ih = (p.y1.min(gy1) - p.y0.max(gy0)).max(T::zero());
    let inter = iw * ih;
    let area_p = (p.x1 - p.x0) * (p.y1 - p.y0);
    let area_g = (gx1 - gx0) * (gy1 - gy0);
    let union = area_p + area_g - inter;
    (inter / union, inter, union, area_p)
}

/// Forward pass: heads must be ordered as in `ctx.heads`.
pub fn loss_forward<T: Real>(heads: &[&Tensor<T>], ctx: &LossCtx) -> (T, LossComponents) {
    let k = ctx.num_categories;
    let mut obj_sum = T::zero();
    let mut total_cells = 0usize;
    let mut box_sum = T::zero();
    let mut cls_sum = T::zero();
    let mut total_pos = 0usize;

    for (head, ct) in heads.iter().zip(&ctx.heads) {
        let (planes, h, w) = head.dims3();
        assert_eq!(planes, 1 + k + 4, "head plane count mismatch");
        assert_eq!((h, w), (ct.h, ct.w), "head grid mismatch");
        let obj_plane = head.plane(0);
        for (i, &logit) in obj_plane.iter().enumerate() {
            obj_sum = obj_sum + bce_with_logits(logit, T::from_f64(ct.obj[i]));
        }
        total_cells += h * w;

        for pos in &ct.positives {
            let p = pred_box(head, ct, k, pos);
            let (iou, _, _, _) = iou_parts(&p, &pos.gt);
            box_sum = box_sum + (T::one() - iou);
            for cat in 0..k {
                let logit = head.at3(1 + cat, pos.row, pos.col);
                let target = if cat == pos.category_id {
                    T::one()
                } else {
                    T::zero()
                };
                cls_sum = cls_sum + bce_with_logits(logit, target);
            }
            total_pos += 1;
        }
    }

    let obj_mean = obj_sum / T::from_f64(total_cells as f64);
    let (box_mean, cls_mean) = if total_pos > 0 {
        let p = T::from_f64(total_pos as f64);
        (box_sum / p, cls_sum / p)
    } else {
        (T::zero(), T::zero())
    };
    let total = T::from_f64(ctx.lambda_obj) * obj_mean
        + T::from_f64(ctx.lambda_box) * box_mean
        + T::from_f64(ctx.lambda_cls) * cls_mean;
    let comps = LossComponents {
        total: total.as_f64(),
        obj: obj_mean.as_f64(),
        bbox: box_mean.as_f64(),
        cls: cls_mean.as_f64(),
    };
    (total, comps)
}

/// Backward pass: gradient of (upstream * loss) w.r.t. each head tensor.
pub fn loss_backward<T: Real>(
    heads: &[&Tensor<T>],
    ctx: &LossCtx,
    upstream: T,
) -> Vec<Tensor<T>> {
    let k = ctx.num_categories;
    let total_cells: usize = ctx.heads.iter().map(|c| c.h * c.w).sum();
    let total_pos: usize = ctx.heads.iter().map(|c| c.positives.len()).sum();
    let obj_scale = upstream * T::from_f64(ctx.lambda_obj / total_cells as f64);
    let pos_scale = if total_pos > 0 {
        T::from_f64(1.0 / total_pos as f64)
    } else {
        T::zero()
    };
    let box_scale = upstream * T::from_f64(ctx.lambda_box) * pos_scale;
    let cls_scale = upstream * T::from_f64(ctx.lambda_cls) * pos_scale;

    let mut grads = Vec::with_capacity(heads.len());
    for (head, ct) in heads.iter().zip(&ctx.heads) {
        let (planes, h, w) = head.dims3();
        let mut g = Tensor::<T>::zeros(&[planes, h, w]);

        // Objectness: d BCE / d logit = sigmoid(logit) - target.
        {
            let obj_plane = head.plane(0);
            let g_plane = g.plane_mut(0);
            for i in 0..h * w {
                g_plane[i] = obj_scale * (sigmoid(obj_plane[i]) - T::from_f64(ct.obj[i]));
            }
        }

        for pos in &ct.positives {
            // Classification planes.
            for cat in 0..k {
                let logit = head.at3(1 + cat, pos.row, pos.col);
                let target = if cat == pos.category_id {
                    T::one()
                } else {
                    T::zero()
                };
                let idx = ((1 + cat) * h + pos.row) * w + pos.col;
                g.data_mut()[idx] = g.data()[idx] + cls_scale * (sigmoid(logit) - target);
            }

            // Box planes via IoU.
            let p = pred_box(head, ct, k, pos);
            let (_, inter, union, _) = iou_parts(&p, &pos.gt);
            let gx0 = T::from_f64(pos.gt[0]);
            let gy0 = T::from_f64(pos.gt[1]);
            let gx1 = T::from_f64(pos.gt[2]);
            let gy1 = T::from_f64(pos.gt[3]);
            let iw = (p.x1.min(gx1) - p.x0.max(gx0)).max(T::zero());
            let ih = (p.y1.min(gy1) - p.y0.max(gy0)).max(T::zero());
            let overlap = iw > T::zero() && ih > T::zero();

            let width = p.x1 - p.x0;
            let height = p.y1 - p.y0;

            // d inter / d corner (zero without overlap).
            let di = |corner: usize| -> T {
                if !overlap {
                    return T::zero();
                }
                match corner {
                    0 => {
                        if p.x0 >= gx0 {
                            -ih
                        } else {
                            T::zero()
                        }
                    }
                    1 => {
                        if p.y0 >= gy0 {
                            -iw
                        } else {
                            T::zero()
                        }
                    }
                    2 => {
                        if p.x1 <= gx1 {
                            ih
                        } else {
                            T::zero()
                        }
                    }
                    _ => {
                        if p.y1 <= gy1 {
                            iw
                        } else {
                            T::zero()
                        }
                    }
                }
            };
            // d area_p / d corner.
            let da = [
                -height, -width, height, width,
            ];

            let u2 = union * union;
            for corner in 0..4 {
                let d_inter = di(corner);
                let d_union = da[corner] - d_inter;
                let d_iou = (d_inter * union - inter * d_union) / u2;
                // loss term is (1 - iou): d/dcorner = -d_iou,
                // then chain through distance = softplus(logit) * stride.
                let plane = 1 + k + corner;
                let logit = head.at3(plane, pos.row, pos.col);
                let stride = T::from_f64(ct.stride as f64);
                // x0 = ccx - dl  => d x0 / d dl = -1; x1 = ccx + dr => +1.
                let corner_per_dist = if corner < 2 { -T::one() } else { T::one() };
                let d_logit = -d_iou * corner_per_dist * sigmoid(logit) * stride;
                let idx = (plane * h + pos.row) * w + pos.col;
                g.data_mut()[idx] = g.data()[idx] + box_scale * d_logit;
            }
        }
        grads.push(g);
    }
    grads
}
