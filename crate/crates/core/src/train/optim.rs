//! SGD with momentum and Adam, both with weight decay folded into the
//! gradient, plus the linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::detector::WeightSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer {other:?} (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdHyper {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdHyper {
    fn default() -> Self {
        Self {
            momentum: 0.937,
            weight_decay: 0.0005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
        }
    }
}

/// Per-parameter optimizer buffers, aligned with the weight set's canonical
/// tensor order.
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub sgd: SgdHyper,
    pub adam: AdamHyper,
    pub step: u64,
    momentum: Vec<Tensor<f32>>,
    second: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weights: &WeightSet<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = weights.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            kind,
            sgd: SgdHyper::default(),
            adam: AdamHyper::default(),
            step: 0,
            momentum: zeros.clone(),
            second: zeros,
        }
    }
}

/// Weight decay applies to convolution kernels only: `.w` tensors and the
/// CBAM spatial kernel, not normalization parameters, not the MLP, not the
/// bias.
fn decays(name: &str) -> bool {
    name.ends_with(".w") || name == "cbam.kernel"
}

fn check_finite(name: &str, grad: &Tensor<f32>) -> Result<()> {
    if !grad.all_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    Ok(())
}

/// g' = g + wd*w; v <- m*v + g'; w <- w - lr*v.
pub fn sgd_step(
    weights: &mut WeightSet<f32>,
    grads: &[Tensor<f32>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let lr = lr as f32;
    let m = state.sgd.momentum;
    let wd = state.sgd.weight_decay;
    for (i, (name, w)) in weights.iter_mut().enumerate() {
        let g = &grads[i];
        check_finite(name, g)?;
        let decay = if decays(name) { wd } else { 0.0 };
        let v = &mut state.momentum[i];
        for ((wv, &gv), vv) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(v.data_mut())
        {
            let g_eff = gv + decay * *wv;
            *vv = m * *vv + g_eff;
            *wv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam with the same folded weight decay as `sgd_step`.
pub fn adam_step(
    weights: &mut WeightSet<f32>,
    grads: &[Tensor<f32>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let lr = lr as f32;
    let h = state.adam;
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (i, (name, w)) in weights.iter_mut().enumerate() {
        let g = &grads[i];
        check_finite(name, g)?;
        let decay = if decays(name) { h.weight_decay } else { 0.0 };
        let m = &mut state.momentum[i];
        let v = &mut state.second[i];
        for (((wv, &gv), mv), vv) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g_eff = gv + decay * *wv;
            *mv = h.beta1 * *mv + (1.0 - h.beta1) * g_eff;
            *vv = h.beta2 * *vv + (1.0 - h.beta2) * g_eff * g_eff;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *wv -= lr * mhat / (vhat.sqrt() + h.eps);
        }
    }
    state.step += 1;
    Ok(())
}

/// Linear interpolation between arbitrary endpoints, exact at both ends.
pub fn lr_linear(iter: usize, total_iters: usize, lr_initial: f64, lr_final: f64) -> f64 {
    assert!(total_iters >= 1, "total_iters must be at least 1");
    let frac = iter as f64 / total_iters as f64;
    lr_initial * (1.0 - frac) + lr_final * frac
}

/// The published schedule: 0.01 falling linearly to 0.001.
pub fn lr_at(iter: usize, total_iters: usize) -> f64 {
    lr_linear(iter, total_iters, 0.01, 0.001)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::WeightSet;

    fn single_param(name: &str, value: f32) -> WeightSet<f32> {
        WeightSet::from_entries(vec![(name.into(), Tensor::from_vec(&[1], vec![value]))]).unwrap()
    }

    fn grad(value: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::from_vec(&[1], vec![value])]
    }

    #[test]
    fn plain_descent_without_momentum() {
        let mut ws = single_param("stem.conv.scale", 1.0); // no decay on scales
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
        st.sgd.momentum = 0.0;
        st.sgd.weight_decay = 0.0;
        sgd_step(&mut ws, &grad(0.5), &mut st, 0.1).unwrap();
        assert!((ws.get("stem.conv.scale").unwrap().data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn two_momentum_steps_match_the_recurrence() {
        let mut ws = single_param("stem.conv.scale", 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
        st.sgd.momentum = 0.937;
        st.sgd.weight_decay = 0.0;
        sgd_step(&mut ws, &grad(0.5), &mut st, 0.1).unwrap();
        assert!((ws.get("stem.conv.scale").unwrap().data()[0] - 0.95).abs() < 1e-7);
        sgd_step(&mut ws, &grad(0.5), &mut st, 0.1).unwrap();
        // v2 = 0.937 * 0.5 + 0.5 = 0.9685; w = 0.95 - 0.09685 = 0.85315
        assert!((ws.get("stem.conv.scale").unwrap().data()[0] - 0.85315).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_decays_velocity_but_not_weights() {
        let mut ws = single_param("stem.conv.scale", 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
        st.sgd.weight_decay = 0.0;
        sgd_step(&mut ws, &grad(0.0), &mut st, 0.1).unwrap();
        assert_eq!(ws.get("stem.conv.scale").unwrap().data()[0], 1.0);
    }

    #[test]
    fn weight_decay_applies_to_kernels_only() {
        for (name, expect_decay) in [
            ("stem.conv.w", true),
            ("cbam.kernel", true),
            ("cbam.W1", false),
            ("cbam.bias", false),
            ("stage1.down.scale", false),
            ("head.s8.out.w", true),
        ] {
            let mut ws = single_param(name, 1.0);
            let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
            st.sgd.momentum = 0.0;
            sgd_step(&mut ws, &grad(0.0), &mut st, 0.1).unwrap();
            let w = ws.get(name).unwrap().data()[0];
            if expect_decay {
                assert!(w < 1.0, "{name} should decay, stayed {w}");
            } else {
                assert_eq!(w, 1.0, "{name} should not decay");
            }
        }
    }

    #[test]
    fn adam_first_step_is_about_lr_times_sign() {
        let mut ws = single_param("stem.conv.scale", 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &ws);
        st.adam.weight_decay = 0.0;
        adam_step(&mut ws, &grad(0.5), &mut st, 0.01).unwrap();
        let w = ws.get("stem.conv.scale").unwrap().data()[0];
        assert!((w - 0.99).abs() < 1e-4, "w = {w}");
    }

    #[test]
    fn adam_with_zero_gradient_keeps_weights() {
        let mut ws = single_param("stem.conv.scale", 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &ws);
        st.adam.weight_decay = 0.0;
        for _ in 0..5 {
            adam_step(&mut ws, &grad(0.0), &mut st, 0.01).unwrap();
        }
        assert_eq!(ws.get("stem.conv.scale").unwrap().data()[0], 1.0);
    }

    #[test]
    fn equal_gradients_give_identical_adam_updates() {
        let mut ws = WeightSet::from_entries(vec![(
            "stem.conv.scale".into(),
            Tensor::from_vec(&[2], vec![1.0, 1.0]),
        )])
        .unwrap();
        let mut st = OptimizerState::new(OptimizerKind::Adam, &ws);
        adam_step(
            &mut ws,
            &[Tensor::from_vec(&[2], vec![0.3, 0.3])],
            &mut st,
            0.01,
        )
        .unwrap();
        let d = ws.get("stem.conv.scale").unwrap().data();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn nan_gradients_are_reported_by_name() {
        let mut ws = single_param("neck.fuse.w", 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
        let err = sgd_step(&mut ws, &grad(f32::NAN), &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("neck.fuse.w"), "{err}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = crate::detector::DetectorConfig::desk();
        let mut ws = crate::detector::init_weights::<f32>(&cfg, 1).unwrap();
        let before = ws.clone();
        let grads: Vec<Tensor<f32>> = ws.iter().map(|(_, t)| Tensor::filled(t.shape(), 0.7)).collect();
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &ws);
        sgd_step(&mut ws, &grads, &mut st, 0.0).unwrap();
        assert_eq!(ws, before);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &ws);
        adam_step(&mut ws, &grads, &mut st, 0.0).unwrap();
        assert_eq!(ws, before);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_at(0, 100), 0.01);
        assert_eq!(lr_at(100, 100), 0.001);
        assert!((lr_at(50, 100) - 0.0055).abs() < 1e-12);
    }
}
