//! Run configuration document: everything a training run needs, in one JSON
//! file. Unknown keys are rejected so typos fail loudly. Command-line flags
//! override individual fields.

use cowdet_core::augment::AugmentSpec;
use cowdet_core::detector::DetectorConfig;
use cowdet_core::train::OptimizerKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub checkpoint: Option<String>,
    pub log: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub detector: DetectorConfig,
    pub augment: AugmentSpec,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            augment: AugmentSpec::default(),
            optimizer: OptimizerKind::Sgd,
            epochs: 250,
            batch_size: 16,
            seed: 0,
            lr_initial: 0.01,
            lr_final: 0.001,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.detector
            .validate()
            .map_err(|e| format!("invalid config: {e}"))?;
        cfg.augment
            .validate()
            .map_err(|e| format!("invalid config: {e}"))?;
        Ok(cfg)
    }
}
