//! Named parameter arrays and their canonical ordering.
//!
//! The names below are a stable contract shared with the checkpoint format:
//! `stem.conv`, `stage{1..3}.down`, `stage{1..3}.res.{a,b}`, `cbam.*`,
//! `neck.fuse`, `head.s{8,16}.{conv,out}`, with `.w` / `.scale` / `.shift`
//! suffixes for kernels and normalization parameters.

use std::collections::HashMap;

use crate::cbam::{he_normal, ChannelAttentionParams, SPATIAL_KERNEL};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};

use super::DetectorConfig;

/// Ordered, named parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> WeightSet<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate tensor name {name:?}"
                )));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<U: Real>(&self) -> WeightSet<U> {
        WeightSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Check names and shapes against the config's expected table; the
    /// error lists what is missing or unexpected.
    pub fn validate_for(&self, config: &DetectorConfig) -> Result<()> {
        let expected = weight_shapes(config);
        let mut missing = Vec::new();
        for (name, shape) in &expected {
            match self.get(name) {
                None => missing.push(name.clone()),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ShapeMismatch {
                        context: name.clone(),
                        expected: format!("{shape:?}"),
                        actual: format!("{:?}", t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        let extra: Vec<String> = self
            .entries
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !expected.iter().any(|(e, _)| e == n))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::TensorNameMismatch { missing, extra });
        }
        Ok(())
    }
}

/// Canonical (name, shape) table for a configuration.
pub fn weight_shapes(config: &DetectorConfig) -> Vec<(String, Vec<usize>)> {
    let [w0, w1, w2, w3] = config.stage_widths;
    let planes = config.head_planes();
    let mut out = Vec::new();

    fn conv_block(out: &mut Vec<(String, Vec<usize>)>, name: &str, co: usize, ci: usize, k: usize) {
        out.push((format!("{name}.w"), vec![co, ci, k, k]));
        out.push((format!("{name}.scale"), vec![co]));
        out.push((format!("{name}.shift"), vec![co]));
    }

    conv_block(&mut out, "stem.conv", w0, 3, 3);
    for (i, (ci, co)) in [(w0, w1), (w1, w2), (w2, w3)].into_iter().enumerate() {
        let stage = format!("stage{}", i + 1);
        conv_block(&mut out, &format!("{stage}.down"), co, ci, 3);
        conv_block(&mut out, &format!("{stage}.res.a"), co, co, 3);
        conv_block(&mut out, &format!("{stage}.res.b"), co, co, 3);
    }
    if config.cbam_enabled {
        let hidden = ChannelAttentionParams::<f32>::hidden_for(w3, config.cbam_reduction);
        out.push(("cbam.W1".into(), vec![hidden, w3]));
        out.push(("cbam.W2".into(), vec![w3, hidden]));
        out.push(("cbam.kernel".into(), vec![1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL]));
        out.push(("cbam.bias".into(), vec![1]));
    }
    let hw = config.head_width;
    conv_block(&mut out, "neck.fuse", w2, w2 + w3, 3);
    conv_block(&mut out, "head.s8.conv", hw, w2, 3);
    out.push(("head.s8.out.w".into(), vec![planes, hw, 1, 1]));
    conv_block(&mut out, "head.s16.conv", hw, w3, 3);
    out.push(("head.s16.out.w".into(), vec![planes, hw, 1, 1]));
    out
}

/// Fan-in-scaled normal init for kernels, identity for normalization:
/// scale 1, shift 0, CBAM bias 0. The two final prediction kernels start at
/// zero so every cell opens at logit 0 and the score ranking reflects only
/// accumulated gradient signal, never init noise. One seeded stream drawn in
/// canonical order, so initialization is reproducible across runs.
pub fn init_weights<T: Real>(config: &DetectorConfig, seed: u64) -> Result<WeightSet<T>> {
    config.validate()?;
    let mut rng = Stream::derived(seed, "init");
    let mut entries = Vec::new();
    for (name, shape) in weight_shapes(config) {
        let tensor = if name.ends_with(".scale") {
            Tensor::filled(&shape, T::one())
        } else if name.ends_with(".shift") || name == "cbam.bias" || name.ends_with(".out.w") {
            Tensor::zeros(&shape)
        } else if name == "cbam.W1" || name == "cbam.W2" {
            let fan_in = shape[1];
            he_normal(&shape, fan_in, &mut rng)
        } else {
            // Convolution kernels, including cbam.kernel and head outputs.
            let fan_in: usize = shape[1..].iter().product();
            he_normal(&shape, fan_in, &mut rng)
        };
        entries.push((name, tensor));
    }
    WeightSet::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_covers_the_expected_names_exactly() {
        let cfg = DetectorConfig::desk();
        let ws: WeightSet<f32> = init_weights(&cfg, 0).unwrap();
        ws.validate_for(&cfg).unwrap();
        assert!(ws.get("stem.conv.w").is_some());
        assert!(ws.get("cbam.W1").is_some());
        assert!(ws.get("head.s16.out.w").is_some());
    }

    #[test]
    fn cbam_disabled_removes_cbam_tensors() {
        let cfg = DetectorConfig {
            cbam_enabled: false,
            ..DetectorConfig::desk()
        };
        let ws: WeightSet<f32> = init_weights(&cfg, 0).unwrap();
        assert!(ws.get("cbam.W1").is_none());
        ws.validate_for(&cfg).unwrap();
    }

    #[test]
    fn validate_reports_missing_and_extra_names() {
        let cfg = DetectorConfig::desk();
        let ws: WeightSet<f32> = init_weights(&cfg, 0).unwrap();
        let mut entries: Vec<(String, Tensor<f32>)> = ws
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        entries.pop();
        entries.push(("bogus.w".into(), Tensor::zeros(&[1])));
        let bad = WeightSet::from_entries(entries).unwrap();
        let err = bad.validate_for(&cfg).unwrap_err();
        match err {
            Error::TensorNameMismatch { missing, extra } => {
                assert_eq!(missing, vec!["head.s16.out.w".to_string()]);
                assert_eq!(extra, vec!["bogus.w".to_string()]);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn same_seed_reproduces_initialization() {
        let cfg = DetectorConfig::desk();
        let a: WeightSet<f32> = init_weights(&cfg, 5).unwrap();
        let b: WeightSet<f32> = init_weights(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c: WeightSet<f32> = init_weights(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn norm_scales_start_at_one_and_shifts_at_zero() {
        let cfg = DetectorConfig::desk();
        let ws: WeightSet<f64> = init_weights(&cfg, 1).unwrap();
        assert!(ws
            .get("stem.conv.scale")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(ws
            .get("neck.fuse.shift")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
