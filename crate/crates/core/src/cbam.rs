//! Convolutional Block Attention Module: channel attention from pooled
//! descriptors through a shared two-layer MLP, spatial attention from
//! channel-pooled planes through a 7x7 convolution, composed sequentially
//! and fully differentiable.

use crate::autodiff::{check, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};

/// Rank-3 (C, H, W) activation map.
pub type FeatureMap<T> = Tensor<T>;

pub const SPATIAL_KERNEL: usize = 7;
pub const SPATIAL_PAD: usize = 3;
pub const DEFAULT_REDUCTION: usize = 16;
const MIN_HIDDEN: usize = 4;

/// Shared-MLP weights for channel attention. No bias terms, one hidden
/// layer with ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttentionParams<T> {
    /// (hidden, C)
    pub w1: Tensor<T>,
    /// (C, hidden)
    pub w2: Tensor<T>,
}

impl<T: Real> ChannelAttentionParams<T> {
    pub fn hidden_for(channels: usize, reduction: usize) -> usize {
        (channels / reduction).max(MIN_HIDDEN)
    }

    pub fn zeros(channels: usize, reduction: usize) -> Self {
        let hidden = Self::hidden_for(channels, reduction);
        Self {
            w1: Tensor::zeros(&[hidden, channels]),
            w2: Tensor::zeros(&[channels, hidden]),
        }
    }

    /// He-initialized weights.
    pub fn init(channels: usize, reduction: usize, rng: &mut Stream) -> Self {
        let hidden = Self::hidden_for(channels, reduction);
        let w1 = he_normal::<T>(&[hidden, channels], channels, rng);
        let w2 = he_normal::<T>(&[channels, hidden], hidden, rng);
        Self { w1, w2 }
    }

    pub fn channels(&self) -> usize {
        self.w1.dims2().1
    }

    fn validate_for(&self, channels: usize) -> Result<()> {
        let (h1, c1) = self.w1.dims2();
        let (c2, h2) = self.w2.dims2();
        if c1 != channels || c2 != channels || h1 != h2 {
            return Err(Error::ShapeMismatch {
                context: "channel attention".into(),
                expected: format!("W1 (hidden, {channels}), W2 ({channels}, hidden)"),
                actual: format!("W1 ({h1}, {c1}), W2 ({c2}, {h2})"),
            });
        }
        Ok(())
    }
}

/// 7x7 single-output convolution over the stacked channel-avg/channel-max
/// planes, plus a scalar bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttentionParams<T> {
    /// (1, 2, 7, 7)
    pub kernel: Tensor<T>,
    pub bias: T,
}

impl<T: Real> SpatialAttentionParams<T> {
    pub fn zeros() -> Self {
        Self {
            kernel: Tensor::zeros(&[1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL]),
            bias: T::zero(),
        }
    }

    pub fn init(rng: &mut Stream) -> Self {
        let fan_in = 2 * SPATIAL_KERNEL * SPATIAL_KERNEL;
        Self {
            kernel: he_normal::<T>(&[1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL], fan_in, rng),
            bias: T::zero(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (o, i, kh, kw) = self.kernel.dims4();
        if (o, i, kh, kw) != (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL) {
            return Err(Error::ShapeMismatch {
                context: "spatial attention".into(),
                expected: format!("kernel (1, 2, {SPATIAL_KERNEL}, {SPATIAL_KERNEL})"),
                actual: format!("kernel ({o}, {i}, {kh}, {kw})"),
            });
        }
        Ok(())
    }
}

pub(crate) fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len)
            .map(|_| T::from_f64(rng.normal() * std))
            .collect(),
    )
}

fn validate_feature<T: Real>(f: &FeatureMap<T>) -> Result<(usize, usize, usize)> {
    if f.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "feature map".into(),
            expected: "(C, H, W)".into(),
            actual: format!("{:?}", f.shape()),
        });
    }
    if !f.all_finite() {
        return Err(Error::InvalidArgument("feature map contains NaN/Inf".into()));
    }
    Ok(f.dims3())
}

/// Tape-level channel attention: returns the Mc node of shape (C).
pub(crate) fn channel_attention_graph<T: Real>(
    tape: &mut Tape<T>,
    f: NodeId,
    w1: NodeId,
    w2: NodeId,
) -> NodeId {
    let avg = tape.global_avg_pool(f);
    let mx = tape.global_max_pool(f);
    let a_hidden = tape.matvec(w1, avg);
    let a_hidden = tape.relu(a_hidden);
    let a_out = tape.matvec(w2, a_hidden);
    let m_hidden = tape.matvec(w1, mx);
    let m_hidden = tape.relu(m_hidden);
    let m_out = tape.matvec(w2, m_hidden);
    let sum = tape.add(a_out, m_out);
    tape.sigmoid(sum)
}

/// Tape-level spatial attention over F': returns the Ms node, shape (1, H, W).
pub(crate) fn spatial_attention_graph<T: Real>(
    tape: &mut Tape<T>,
    fp: NodeId,
    kernel: NodeId,
    bias: NodeId,
) -> NodeId {
    let avg = tape.channel_mean(fp);
    let mx = tape.channel_max(fp);
    let stacked = tape.concat_channels(avg, mx);
    let conv = tape.conv2d(stacked, kernel, 1, SPATIAL_PAD);
    let conv = tape.add_bias(conv, bias);
    tape.sigmoid(conv)
}

/// Full CBAM refinement: F'' = Ms(F') (x) (Mc(F) (x) F).
pub(crate) fn cbam_graph<T: Real>(
    tape: &mut Tape<T>,
    f: NodeId,
    w1: NodeId,
    w2: NodeId,
    kernel: NodeId,
    bias: NodeId,
) -> NodeId {
    let mc = channel_attention_graph(tape, f, w1, w2);
    let f_prime = tape.mul_channel(f, mc);
    let ms = spatial_attention_graph(tape, f_prime, kernel, bias);
    tape.mul_spatial(f_prime, ms)
}

/// Per-channel attention weights Mc, each strictly inside (0, 1).
pub fn channel_attention<T: Real>(
    f: &FeatureMap<T>,
    params: &ChannelAttentionParams<T>,
) -> Result<Tensor<T>> {
    let (c, _, _) = validate_feature(f)?;
    params.validate_for(c)?;
    let mut tape = Tape::new();
    let fid = tape.leaf(f.clone());
    let w1 = tape.leaf(params.w1.clone());
    let w2 = tape.leaf(params.w2.clone());
    let mc = channel_attention_graph(&mut tape, fid, w1, w2);
    Ok(tape.value(mc).clone())
}

/// Spatial attention map Ms of shape (H, W) computed over F'.
pub fn spatial_attention<T: Real>(
    fp: &FeatureMap<T>,
    params: &SpatialAttentionParams<T>,
) -> Result<Tensor<T>> {
    let (_, h, w) = validate_feature(fp)?;
    params.validate()?;
    let mut tape = Tape::new();
    let fid = tape.leaf(fp.clone());
    let k = tape.leaf(params.kernel.clone());
    let b = tape.leaf(Tensor::scalar(params.bias));
    let ms = spatial_attention_graph(&mut tape, fid, k, b);
    Ok(Tensor::from_vec(&[h, w], tape.value(ms).data().to_vec()))
}

/// Sequential channel-then-spatial refinement; output shape equals input
/// shape.
pub fn cbam_forward<T: Real>(
    f: &FeatureMap<T>,
    cp: &ChannelAttentionParams<T>,
    sp: &SpatialAttentionParams<T>,
) -> Result<FeatureMap<T>> {
    let (c, _, _) = validate_feature(f)?;
    cp.validate_for(c)?;
    sp.validate()?;
    let mut tape = Tape::new();
    let fid = tape.leaf(f.clone());
    let w1 = tape.leaf(cp.w1.clone());
    let w2 = tape.leaf(cp.w2.clone());
    let k = tape.leaf(sp.kernel.clone());
    let b = tape.leaf(Tensor::scalar(sp.bias));
    let out = cbam_graph(&mut tape, fid, w1, w2, k, b);
    Ok(tape.value(out).clone())
}

/// Compare analytic gradients of L = sum(F''^2)/2 against central finite
/// differences for every parameter and input entry. Returns the max relative
/// error, |a - f| / max(|a|, |f|, 1e-8). Runs in f64.
pub fn cbam_grad_check(
    f: &FeatureMap<f64>,
    cp: &ChannelAttentionParams<f64>,
    sp: &SpatialAttentionParams<f64>,
    eps: f64,
) -> Result<f64> {
    let (c, _, _) = validate_feature(f)?;
    cp.validate_for(c)?;
    sp.validate()?;
    let inputs = vec![
        f.clone(),
        cp.w1.clone(),
        cp.w2.clone(),
        sp.kernel.clone(),
        Tensor::scalar(sp.bias),
    ];
    let err = check::max_grad_error(
        &|tape, ids| {
            let out = cbam_graph(tape, ids[0], ids[1], ids[2], ids[3], ids[4]);
            tape.half_sum_squares(out)
        },
        &inputs,
        eps,
    );
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_feature(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Stream::new(seed);
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.range_f64(-1.5, 1.5)).collect())
    }

    fn rand_params(c: usize, seed: u64) -> (ChannelAttentionParams<f64>, SpatialAttentionParams<f64>) {
        let mut rng = Stream::new(seed);
        (
            ChannelAttentionParams::init(c, DEFAULT_REDUCTION, &mut rng),
            SpatialAttentionParams::init(&mut rng),
        )
    }

    #[test]
    fn zero_input_gives_half_attention_everywhere() {
        let f = Tensor::<f64>::zeros(&[4, 5, 5]);
        let (cp, sp) = rand_params(4, 1);
        let mc = channel_attention(&f, &cp).unwrap();
        assert!(mc.data().iter().all(|&v| v == 0.5));
        // F' = 0.5 * 0 = 0, so Ms sees zeros too; with the random bias the
        // map is constant sigmoid(bias).
        let f2 = cbam_forward(&f, &cp, &sp).unwrap();
        assert!(f2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_bias_zero_input_spatial_map_is_half() {
        let f = Tensor::<f64>::zeros(&[3, 4, 4]);
        let (_, mut sp) = rand_params(3, 2);
        sp.bias = 0.0;
        let ms = spatial_attention(&f, &sp).unwrap();
        assert!(ms.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_channel_constant_one_matches_sigmoid_of_two() {
        // hidden = 1, W1 = [1], W2 = [1]: avg = max = 1, each branch MLP(1) = 1.
        let cp = ChannelAttentionParams {
            w1: Tensor::from_vec(&[1, 1], vec![1.0]),
            w2: Tensor::from_vec(&[1, 1], vec![1.0]),
        };
        let f = Tensor::<f64>::filled(&[1, 3, 3], 1.0);
        let mc = channel_attention(&f, &cp).unwrap();
        assert!((mc.data()[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn spatial_center_tap_sums_avg_and_max() {
        // H = W = 1, C = 2, values (1, 3): channel-avg 2, channel-max 3.
        // Kernel zero except center taps (both planes 1), bias 0: sigmoid(5).
        let f = Tensor::from_vec(&[2, 1, 1], vec![1.0, 3.0]);
        let mut sp = SpatialAttentionParams::<f64>::zeros();
        let center = SPATIAL_KERNEL / 2;
        for plane in 0..2 {
            let idx = (plane * SPATIAL_KERNEL + center) * SPATIAL_KERNEL + center;
            sp.kernel.data_mut()[idx] = 1.0;
        }
        let ms = spatial_attention(&f, &sp).unwrap();
        assert_eq!(ms.shape(), &[1, 1]);
        let expected = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((ms.data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.993_307).abs() < 1e-6);
    }

    #[test]
    fn duplicated_channels_with_duplicated_weights_get_equal_attention() {
        // Channels 0 and 1 of F identical; W1 columns 0/1 identical and W2
        // rows 0/1 identical: Mc[0] == Mc[1].
        let mut rng = Stream::new(3);
        let mut f = rand_feature(&[3, 4, 4], 4);
        let plane0 = f.plane(0).to_vec();
        f.plane_mut(1).copy_from_slice(&plane0);
        let hidden = ChannelAttentionParams::<f64>::hidden_for(3, DEFAULT_REDUCTION);
        let mut w1 = Tensor::zeros(&[hidden, 3]);
        for r in 0..hidden {
            let v = rng.range_f64(-1.0, 1.0);
            w1.data_mut()[r * 3] = v;
            w1.data_mut()[r * 3 + 1] = v;
            w1.data_mut()[r * 3 + 2] = rng.range_f64(-1.0, 1.0);
        }
        let mut w2 = Tensor::zeros(&[3, hidden]);
        for c in 0..hidden {
            let v = rng.range_f64(-1.0, 1.0);
            w2.data_mut()[c] = v;
            w2.data_mut()[hidden + c] = v;
            w2.data_mut()[2 * hidden + c] = rng.range_f64(-1.0, 1.0);
        }
        let cp = ChannelAttentionParams { w1, w2 };
        let mc = channel_attention(&f, &cp).unwrap();
        assert_eq!(mc.data()[0], mc.data()[1]);
    }

    #[test]
    fn output_shape_equals_input_shape_and_attention_is_bounded() {
        for shape in [[3usize, 5, 7], [8, 4, 4], [1, 1, 1]] {
            let f = rand_feature(&shape, 7 + shape[0] as u64);
            let (cp, sp) = rand_params(shape[0], 8 + shape[0] as u64);
            let mc = channel_attention(&f, &cp).unwrap();
            assert!(mc.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let ms = spatial_attention(&f, &sp).unwrap();
            assert!(ms.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let out = cbam_forward(&f, &cp, &sp).unwrap();
            assert_eq!(out.shape(), f.shape());
            // |F''| <= |F| elementwise since both attention factors are < 1.
            for (o, i) in out.data().iter().zip(f.data()) {
                assert!(o.abs() <= i.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn constant_attention_factors_scale_the_input() {
        // All-zero MLP weights make Mc = 0.5 exactly; zero kernel and bias
        // make Ms = 0.5: F'' = 0.25 * F, exact in floating point.
        let f = rand_feature(&[4, 3, 3], 9);
        let cp = ChannelAttentionParams::<f64>::zeros(4, DEFAULT_REDUCTION);
        let sp = SpatialAttentionParams::<f64>::zeros();
        let out = cbam_forward(&f, &cp, &sp).unwrap();
        for (o, i) in out.data().iter().zip(f.data()) {
            assert_eq!(*o, 0.25 * *i);
        }
    }

    #[test]
    fn shape_mismatch_errors_name_the_channel_counts() {
        let f = rand_feature(&[4, 3, 3], 10);
        let (cp, _) = rand_params(8, 11);
        let err = channel_attention(&f, &cp).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('8'), "{msg}");
    }

    #[test]
    fn grad_check_passes_on_random_instances() {
        let f = rand_feature(&[4, 5, 5], 12);
        let (cp, sp) = rand_params(4, 13);
        let err = cbam_grad_check(&f, &cp, &sp, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_passes_with_zero_parameters() {
        let f = rand_feature(&[4, 5, 5], 14);
        let cp = ChannelAttentionParams::<f64>::zeros(4, DEFAULT_REDUCTION);
        let sp = SpatialAttentionParams::<f64>::zeros();
        let err = cbam_grad_check(&f, &cp, &sp, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_error_does_not_blow_up_as_eps_shrinks() {
        let f = rand_feature(&[3, 4, 4], 15);
        let (cp, sp) = rand_params(3, 16);
        let errs: Vec<f64> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&eps| cbam_grad_check(&f, &cp, &sp, eps).unwrap())
            .collect();
        assert!(
            !(errs[1] > errs[0] && errs[2] > errs[1]),
            "error grows monotonically as eps shrinks: {errs:?}"
        );
    }
}
