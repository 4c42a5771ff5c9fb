//! Loss evaluation over decoded-form predictions, for logging and tests.
//! Training itself goes through the fused tape op in `autodiff::loss`; this
//! computes the identical quantity from a `RawPredictions` value.

use crate::autodiff::loss::{bce_with_logits, LossComponents};
use crate::error::{Error, Result};
use crate::tensor::Real;

use super::decode::RawPredictions;
use super::{DetectorConfig, Targets};

/// L = lambda_obj * mean over all cells of BCE(obj)
///   + lambda_box * mean over positives of (1 - IoU)
///   + lambda_cls * mean over positives of BCE(cls);
/// box and cls terms are zero when there are no positives.
pub fn compute_loss<T: Real>(
    preds: &RawPredictions<T>,
    targets: &Targets,
    config: &DetectorConfig,
) -> Result<LossComponents> {
    let k = config.num_categories;
    if preds.heads.len() != targets.heads.len() {
        return Err(Error::ShapeMismatch {
            context: "loss heads".into(),
            expected: format!("{} heads", targets.heads.len()),
            actual: format!("{} heads", preds.heads.len()),
        });
    }

    let mut obj_sum = 0.0f64;
    let mut total_cells = 0usize;
    let mut box_sum = 0.0f64;
    let mut cls_sum = 0.0f64;
    let mut positives = 0usize;

    for (head, ht) in preds.heads.iter().zip(&targets.heads) {
        let (planes, h, w) = head.planes.dims3();
        if planes != config.head_planes() || (h, w) != (ht.h, ht.w) {
            return Err(Error::ShapeMismatch {
                context: format!("head stride {}", ht.stride),
                expected: format!("({}, {}, {})", config.head_planes(), ht.h, ht.w),
                actual: format!("({planes}, {h}, {w})"),
            });
        }
        for (i, &logit) in head.planes.plane(0).iter().enumerate() {
            obj_sum += bce_with_logits(logit.as_f64(), ht.obj[i]);
        }
        total_cells += h * w;

        let s = ht.stride as f64;
        for pos in &ht.positives {
            let ccx = (pos.col as f64 + 0.5) * s;
            let ccy = (pos.row as f64 + 0.5) * s;
            // Distance planes are already activated pixels here.
            let dl = head.planes.at3(1 + k, pos.row, pos.col).as_f64();
            let dt = head.planes.at3(2 + k, pos.row, pos.col).as_f64();
            let dr = head.planes.at3(3 + k, pos.row, pos.col).as_f64();
            let db = head.planes.at3(4 + k, pos.row, pos.col).as_f64();
            let (px0, py0, px1, py1) = (ccx - dl, ccy - dt, ccx + dr, ccy + db);
            let [gx0, gy0, gx1, gy1] = pos.gt;
            let iw = (px1.min(gx1) - px0.max(gx0)).max(0.0);
            let ih = (py1.min(gy1) - py0.max(gy0)).max(0.0);
            let inter = iw * ih;
            let union = (px1 - px0) * (py1 - py0) + (gx1 - gx0) * (gy1 - gy0) - inter;
            box_sum += 1.0 - inter / union;

            for cat in 0..k {
                let logit = head.planes.at3(1 + cat, pos.row, pos.col).as_f64();
                let target = if cat == pos.category_id { 1.0 } else { 0.0 };
                cls_sum += bce_with_logits(logit, target);
            }
            positives += 1;
        }
    }

    let obj = obj_sum / total_cells as f64;
    let (bbox, cls) = if positives > 0 {
        (box_sum / positives as f64, cls_sum / positives as f64)
    } else {
        (0.0, 0.0)
    };
    let (lo, lb, lc) = config.loss_weights;
    Ok(LossComponents {
        total: lo * obj + lb * bbox + lc * cls,
        obj,
        bbox,
        cls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::loss::softplus;
    use crate::autodiff::Tape;
    use crate::detector::decode::HeadRaw;
    use crate::detector::{assign_targets, build_graph, init_weights, LeafIds};
    use crate::geometry::NormBox;
    use crate::rng::Stream;
    use crate::tensor::Tensor;

    /// Single-cell toy grid with hand-set logits; the expected value is
    /// worked out with plain scalar arithmetic, independent of the
    /// implementation path.
    #[test]
    fn hand_computed_single_cell_loss() {
        let cfg = DetectorConfig {
            input_size: 16,
            stage_widths: [4, 4, 4, 4],
            ..DetectorConfig::desk()
        };
        // Grids: stride 8 -> 2x2, stride 16 -> 1x1; total 5 cells.
        // One GT occupying the whole frame goes to stride 16, cell (0,0).
        let gt = NormBox::new(0.5, 0.5, 0.75, 0.5).unwrap();
        let targets = assign_targets(&[(0, gt)], &cfg).unwrap();
        assert_eq!(targets.heads[1].positives.len(), 1);

        // Head planes: all logits zero; distances at 4 px each.
        let mk_head = |stride: usize, g: usize| HeadRaw {
            stride,
            planes: {
                let mut t = Tensor::<f64>::zeros(&[6, g, g]);
                for p in 2..6 {
                    let start = p * g * g;
                    for v in &mut t.data_mut()[start..start + g * g] {
                        *v = 4.0;
                    }
                }
                t
            },
        };
        let preds = RawPredictions {
            heads: vec![mk_head(8, 2), mk_head(16, 1)],
        };
        let got = compute_loss(&preds, &targets, &cfg).unwrap();

        // Independent arithmetic:
        // obj: 5 cells, 4 negatives + 1 positive, all logits 0 -> each BCE ln 2.
        let ln2 = std::f64::consts::LN_2;
        let obj = ln2;
        // box: cell center (8, 8); pred box (4, 4, 12, 12);
        // gt (0.125*16, 0.25*16, 0.875*16, 0.75*16) = (2, 4, 14, 12).
        // inter: x [4,12]=8, y [4,12]=8 -> 64; areas: pred 64, gt 96.
        let iou: f64 = 64.0 / (64.0 + 96.0 - 64.0);
        let bbox = 1.0 - iou; // 1/3
        // cls: one positive, logit 0, target 1 -> ln 2.
        let cls = ln2;
        let expected_total = 1.0 * obj + 5.0 * bbox + 1.0 * cls;

        assert!((got.obj - obj).abs() < 1e-12, "obj {} vs {}", got.obj, obj);
        assert!((got.bbox - bbox).abs() < 1e-12);
        assert!((got.cls - cls).abs() < 1e-12);
        assert!((got.total - expected_total).abs() < 1e-12);
    }

    #[test]
    fn zero_logit_objectness_costs_ln_two() {
        assert!((bce_with_logits(0.0f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_box_has_zero_box_term() {
        let cfg = DetectorConfig::desk();
        let gt = NormBox::new(0.5, 0.5, 0.4, 0.4).unwrap();
        let targets = assign_targets(&[(0, gt)], &cfg).unwrap();
        let pos = &targets.heads[1].positives[0];
        let s = 16.0;
        let ccx = (pos.col as f64 + 0.5) * s;
        let ccy = (pos.row as f64 + 0.5) * s;
        let g = cfg.grid_size(16);
        let mut planes = Tensor::<f64>::zeros(&[6, g, g]);
        let dists = [
            ccx - pos.gt[0],
            ccy - pos.gt[1],
            pos.gt[2] - ccx,
            pos.gt[3] - ccy,
        ];
        for (i, d) in dists.iter().enumerate() {
            planes.data_mut()[(2 + i) * g * g + pos.row * g + pos.col] = *d;
        }
        let preds = RawPredictions {
            heads: vec![
                HeadRaw {
                    stride: 8,
                    planes: Tensor::zeros(&[6, cfg.grid_size(8), cfg.grid_size(8)]),
                },
                HeadRaw { stride: 16, planes },
            ],
        };
        let got = compute_loss(&preds, &targets, &cfg).unwrap();
        assert!(got.bbox.abs() < 1e-12);
    }

    /// The standalone evaluation must agree with the fused tape op.
    #[test]
    fn matches_the_tape_loss_path() {
        let cfg = DetectorConfig {
            cbam_enabled: false,
            ..DetectorConfig::desk()
        };
        let ws = init_weights::<f64>(&cfg, 40).unwrap();
        let mut rng = Stream::new(41);
        let s = cfg.input_size as usize;
        let img = Tensor::from_vec(
            &[3, s, s],
            (0..3 * s * s).map(|_| rng.range_f64(0.0, 1.0)).collect(),
        );
        let gts = vec![
            (0u32, NormBox::new(0.4, 0.4, 0.2, 0.18).unwrap()),
            (0u32, NormBox::new(0.7, 0.6, 0.4, 0.5).unwrap()),
        ];
        let targets = assign_targets(&gts, &cfg).unwrap();

        let mut tape = Tape::new();
        let leaves = LeafIds::create(&mut tape, &img, &ws);
        let heads = build_graph(&mut tape, &leaves, &cfg).unwrap();
        let (_, tape_comps) = tape.detection_loss(heads.clone(), targets.loss_ctx(&cfg));

        // Build RawPredictions from the same graph values.
        let k = cfg.num_categories;
        let raw = RawPredictions {
            heads: heads
                .iter()
                .zip(super::super::HEAD_STRIDES)
                .map(|(&node, stride)| {
                    let mut planes = tape.value(node).clone();
                    let (_, h, w) = planes.dims3();
                    for p in 1 + k..1 + k + 4 {
                        let start = p * h * w;
                        for v in &mut planes.data_mut()[start..start + h * w] {
                            *v = softplus(*v) * stride as f64;
                        }
                    }
                    HeadRaw { stride, planes }
                })
                .collect(),
        };
        let direct = compute_loss(&raw, &targets, &cfg).unwrap();
        assert!((direct.total - tape_comps.total).abs() < 1e-9);
        assert!((direct.obj - tape_comps.obj).abs() < 1e-9);
        assert!((direct.bbox - tape_comps.bbox).abs() < 1e-9);
        assert!((direct.cls - tape_comps.cls).abs() < 1e-9);
    }

    #[test]
    fn loss_decreases_as_logits_approach_targets() {
        let cfg = DetectorConfig::desk();
        let gt = NormBox::new(0.5, 0.5, 0.4, 0.4).unwrap();
        let targets = assign_targets(&[(0, gt)], &cfg).unwrap();
        let pos = targets.heads[1].positives[0].clone();
        let mut last = f64::INFINITY;
        for scale in [1.0, 2.0, 4.0, 8.0] {
            let mk = |stride: usize, g: usize| {
                let mut t = Tensor::<f64>::filled(&[6, g, g], -scale);
                if stride == 16 {
                    let s = 16.0;
                    let ccx = (pos.col as f64 + 0.5) * s;
                    let ccy = (pos.row as f64 + 0.5) * s;
                    t.data_mut()[pos.row * g + pos.col] = scale;
                    t.data_mut()[g * g + pos.row * g + pos.col] = scale;
                    let dists = [
                        ccx - pos.gt[0],
                        ccy - pos.gt[1],
                        pos.gt[2] - ccx,
                        pos.gt[3] - ccy,
                    ];
                    for (i, d) in dists.iter().enumerate() {
                        t.data_mut()[(2 + i) * g * g + pos.row * g + pos.col] = *d;
                    }
                }
                HeadRaw { stride, planes: t }
            };
            let preds = RawPredictions {
                heads: vec![mk(8, cfg.grid_size(8)), mk(16, cfg.grid_size(16))],
            };
            let loss = compute_loss(&preds, &targets, &cfg).unwrap().total;
            assert!(loss >= 0.0);
            assert!(loss < last, "loss {loss} did not decrease from {last}");
            last = loss;
        }
    }
}
