//! Ground-truth to head-cell assignment.
//!
//! Each ground truth goes to exactly one head: stride 8 when its larger
//! side is below a quarter of the image, stride 16 otherwise; within the
//! head, to the single cell containing the box center. Cell collisions keep
//! the larger-area box. A positive cell carries objectness 1, the category,
//! and the ground-truth corners in pixels; the loss and decoder measure edge
//! distances from the cell center.

use crate::autodiff::loss::{HeadTargets, LossCtx, PositiveCell};
use crate::error::Result;
use crate::geometry::NormBox;

use super::{DetectorConfig, HEAD_STRIDES};

/// Scale rule: boxes with max(w, h) below this fraction go to stride 8.
pub const SMALL_BOX_FRACTION: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct Targets {
    pub heads: Vec<HeadTargets>,
}

impl Targets {
    pub fn loss_ctx(&self, config: &DetectorConfig) -> LossCtx {
        LossCtx {
            lambda_obj: config.loss_weights.0,
            lambda_box: config.loss_weights.1,
            lambda_cls: config.loss_weights.2,
            num_categories: config.num_categories,
            heads: self.heads.clone(),
        }
    }

    pub fn positive_count(&self) -> usize {
        self.heads.iter().map(|h| h.positives.len()).sum()
    }
}

pub fn assign_targets(gts: &[(u32, NormBox)], config: &DetectorConfig) -> Result<Targets> {
    config.validate()?;
    let size = config.input_size as f64;

    let mut heads: Vec<HeadTargets> = HEAD_STRIDES
        .iter()
        .map(|&stride| {
            let g = config.grid_size(stride);
            HeadTargets {
                stride,
                h: g,
                w: g,
                obj: vec![0.0; g * g],
                positives: Vec::new(),
            }
        })
        .collect();

    // (head, cell) -> index into positives, for collision resolution.
    let mut occupied: Vec<std::collections::HashMap<(usize, usize), usize>> =
        vec![Default::default(); heads.len()];

    for &(category_id, bbox) in gts {
        bbox.validate()?;
        let head_idx = if bbox.w.max(bbox.h) < SMALL_BOX_FRACTION {
            0
        } else {
            1
        };
        let head = &mut heads[head_idx];
        let stride = head.stride as f64;
        let col = (((bbox.cx * size) / stride).floor() as usize).min(head.w - 1);
        let row = (((bbox.cy * size) / stride).floor() as usize).min(head.h - 1);

        let (x0, y0, x1, y1) = bbox.corners();
        let pos = PositiveCell {
            row,
            col,
            category_id: category_id as usize,
            gt: [x0 * size, y0 * size, x1 * size, y1 * size],
        };

        match occupied[head_idx].get(&(row, col)) {
            Some(&existing) => {
                let old = &head.positives[existing];
                let old_area = (old.gt[2] - old.gt[0]) * (old.gt[3] - old.gt[1]);
                let new_area = (pos.gt[2] - pos.gt[0]) * (pos.gt[3] - pos.gt[1]);
                if new_area > old_area {
                    head.positives[existing] = pos;
                }
            }
            None => {
                head.obj[row * head.w + col] = 1.0;
                occupied[head_idx].insert((row, col), head.positives.len());
                head.positives.push(pos);
            }
        }
    }
    Ok(Targets { heads })
}
