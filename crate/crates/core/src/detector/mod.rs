//! Toy-scale one-stage anchor-free detector: a small residual backbone,
//! optional CBAM refinement of the stride-16 tail, one top-down fusion, and
//! center-based heads at strides 8 and 16 predicting objectness, category
//! scores, and four center-to-edge distances per cell.

mod assign;
mod decode;
mod lossfn;
mod model;
mod weights;

pub use assign::{assign_targets, Targets};
pub use decode::{decode, predict, RawPredictions};
pub use lossfn::compute_loss;
pub use model::{build_graph, forward, grad_check, LeafIds, NORM_EPS};
pub use weights::{init_weights, weight_shapes, WeightSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEAD_STRIDES: [usize; 2] = [8, 16];

/// Architecture and inference hyperparameters. Serialized as JSON inside
/// checkpoints, so field names are part of the on-disk contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Square input side in pixels; must be divisible by the max stride.
    pub input_size: u32,
    /// Channel widths after the stem and the three stages.
    pub stage_widths: [usize; 4],
    /// Channel width of each head's 3x3 convolution.
    pub head_width: usize,
    pub num_categories: usize,
    pub cbam_enabled: bool,
    pub cbam_reduction: usize,
    pub conf_thresh: f64,
    pub nms_iou: f64,
    /// (objectness, box, classification) loss term weights.
    pub loss_weights: (f64, f64, f64),
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 640,
            stage_widths: [16, 32, 64, 128],
            head_width: 64,
            num_categories: 1,
            cbam_enabled: true,
            cbam_reduction: 16,
            conf_thresh: 0.25,
            nms_iou: 0.45,
            loss_weights: (1.0, 5.0, 1.0),
        }
    }
}

impl DetectorConfig {
    /// Laptop-sized configuration used throughout the test suite.
    pub fn desk() -> Self {
        Self {
            input_size: 128,
            stage_widths: [8, 16, 24, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_stride = *HEAD_STRIDES.iter().max().unwrap() as u32;
        if self.input_size == 0 || self.input_size % max_stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} must be a positive multiple of {max_stride}",
                self.input_size
            )));
        }
        if self.stage_widths.iter().any(|&w| w == 0) || self.head_width == 0 {
            return Err(Error::InvalidArgument(
                "stage and head widths must be positive".into(),
            ));
        }
        if self.num_categories == 0 {
            return Err(Error::InvalidArgument(
                "need at least one category".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.conf_thresh) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold {} outside [0, 1)",
                self.conf_thresh
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "NMS IoU threshold {} outside (0, 1]",
                self.nms_iou
            )));
        }
        if self.cbam_reduction == 0 {
            return Err(Error::InvalidArgument(
                "CBAM reduction must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Output planes per head cell: objectness + categories + 4 distances.
    pub fn head_planes(&self) -> usize {
        1 + self.num_categories + 4
    }

    pub fn grid_size(&self, stride: usize) -> usize {
        (self.input_size as usize) / stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        DetectorConfig::default().validate().unwrap();
        DetectorConfig::desk().validate().unwrap();
    }

    #[test]
    fn indivisible_input_size_is_rejected() {
        let cfg = DetectorConfig {
            input_size: 100,
            ..DetectorConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn desk_head_grids() {
        let cfg = DetectorConfig::desk();
        assert_eq!(cfg.grid_size(8), 16);
        assert_eq!(cfg.grid_size(16), 8);
    }

    #[test]
    fn config_json_round_trip_rejects_unknown_keys() {
        let cfg = DetectorConfig::desk();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: DetectorConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"bogus":1}"#).is_err());
    }
}
