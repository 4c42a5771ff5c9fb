//! Forward graph: stem and three downsampling residual stages (strides 2,
//! 4, 8, 16), optional CBAM on the stride-16 output, nearest-upsample fusion
//! into the stride-8 path, and two linear 1x1 prediction heads.

use crate::autodiff::{loss::softplus, NodeId, Tape};
use crate::cbam::cbam_graph;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::decode::{HeadRaw, RawPredictions};
use super::weights::WeightSet;
use super::{DetectorConfig, HEAD_STRIDES};

/// Epsilon inside the per-channel standardization.
pub const NORM_EPS: f64 = 1e-5;

/// Leaf node handles for one forward build.
pub struct LeafIds {
    pub image: NodeId,
    pub weights: Vec<(String, NodeId)>,
}

impl LeafIds {
    pub fn weight(&self, name: &str) -> Result<NodeId> {
        self.weights
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::ShapeMismatch {
                context: name.to_string(),
                expected: "tensor present".into(),
                actual: "missing".into(),
            })
    }

    /// Push the image and every weight tensor (canonical order) as leaves.
    pub fn create<T: Real>(
        tape: &mut Tape<T>,
        image: &Tensor<T>,
        weights: &WeightSet<T>,
    ) -> Self {
        let image = tape.leaf(image.clone());
        let weights = weights
            .iter()
            .map(|(n, t)| (n.to_string(), tape.leaf(t.clone())))
            .collect();
        Self { image, weights }
    }
}

fn conv_norm_silu<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    leaves: &LeafIds,
    name: &str,
    stride: usize,
) -> Result<NodeId> {
    let w = leaves.weight(&format!("{name}.w"))?;
    let scale = leaves.weight(&format!("{name}.scale"))?;
    let shift = leaves.weight(&format!("{name}.shift"))?;
    let y = tape.conv2d(x, w, stride, 1);
    let y = tape.norm_channels(y, scale, shift, NORM_EPS);
    Ok(tape.silu(y))
}

fn stage<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    leaves: &LeafIds,
    name: &str,
) -> Result<NodeId> {
    let down = conv_norm_silu(tape, x, leaves, &format!("{name}.down"), 2)?;
    let a = conv_norm_silu(tape, down, leaves, &format!("{name}.res.a"), 1)?;
    let b = conv_norm_silu(tape, a, leaves, &format!("{name}.res.b"), 1)?;
    Ok(tape.add(down, b))
}

/// Build the full forward graph from pre-created leaves. Returns the raw
/// head output nodes ordered by stride, [s8, s16].
pub fn build_graph<T: Real>(
    tape: &mut Tape<T>,
    leaves: &LeafIds,
    config: &DetectorConfig,
) -> Result<Vec<NodeId>> {
    let stem = conv_norm_silu(tape, leaves.image, leaves, "stem.conv", 2)?;
    let p4 = stage(tape, stem, leaves, "stage1")?;
    let p8 = stage(tape, p4, leaves, "stage2")?;
    let mut p16 = stage(tape, p8, leaves, "stage3")?;

    if config.cbam_enabled {
        let w1 = leaves.weight("cbam.W1")?;
        let w2 = leaves.weight("cbam.W2")?;
        let kernel = leaves.weight("cbam.kernel")?;
        let bias = leaves.weight("cbam.bias")?;
        p16 = cbam_graph(tape, p16, w1, w2, kernel, bias);
    }

    let up = tape.upsample2(p16);
    let cat = tape.concat_channels(p8, up);
    let fused = conv_norm_silu(tape, cat, leaves, "neck.fuse", 1)?;

    let h8 = conv_norm_silu(tape, fused, leaves, "head.s8.conv", 1)?;
    let w8 = leaves.weight("head.s8.out.w")?;
    let out8 = tape.conv2d(h8, w8, 1, 0);

    let h16 = conv_norm_silu(tape, p16, leaves, "head.s16.conv", 1)?;
    let w16 = leaves.weight("head.s16.out.w")?;
    let out16 = tape.conv2d(h16, w16, 1, 0);

    Ok(vec![out8, out16])
}

fn validate_image<T: Real>(image: &Tensor<T>, config: &DetectorConfig) -> Result<()> {
    let s = config.input_size as usize;
    if image.shape() != [3, s, s] {
        return Err(Error::ShapeMismatch {
            context: "input image".into(),
            expected: format!("(3, {s}, {s})"),
            actual: format!("{:?}", image.shape()),
        });
    }
    Ok(())
}

/// Run the network on one image. Objectness and category planes stay as
/// logits; the four distance planes come back softplus-activated and scaled
/// to pixels.
pub fn forward<T: Real>(
    image: &Tensor<T>,
    weights: &WeightSet<T>,
    config: &DetectorConfig,
) -> Result<RawPredictions<T>> {
    config.validate()?;
    validate_image(image, config)?;
    weights.validate_for(config)?;

    let mut tape = Tape::new();
    let leaves = LeafIds::create(&mut tape, image, weights);
    let heads = build_graph(&mut tape, &leaves, config)?;

    let k = config.num_categories;
    let mut out = Vec::new();
    for (node, stride) in heads.into_iter().zip(HEAD_STRIDES) {
        let mut planes = tape.value(node).clone();
        let (_, h, w) = planes.dims3();
        let stride_t = T::from_f64(stride as f64);
        for plane in 1 + k..1 + k + 4 {
            let start = plane * h * w;
            for v in &mut planes.data_mut()[start..start + h * w] {
                *v = softplus(*v) * stride_t;
            }
        }
        out.push(HeadRaw { stride, planes });
    }
    Ok(RawPredictions { heads: out })
}

/// End-to-end analytic-vs-finite-difference comparison of the full training
/// graph (forward + loss) w.r.t. the image and every parameter, in f64.
pub fn grad_check(config: &DetectorConfig, seed: u64, eps: f64) -> Result<f64> {
    use crate::autodiff::check::max_grad_error;
    use crate::geometry::NormBox;
    use crate::rng::Stream;

    config.validate()?;
    let weights: WeightSet<f64> = super::init_weights(config, seed)?;
    let s = config.input_size as usize;
    let mut rng = Stream::derived(seed, "gradcheck-image");
    let image = Tensor::from_vec(
        &[3, s, s],
        (0..3 * s * s).map(|_| rng.range_f64(0.0, 1.0)).collect(),
    );

    // One small and one large ground-truth box so both heads get positives.
    let gts = vec![
        (0u32, NormBox::new(0.3, 0.35, 0.15, 0.2).unwrap()),
        (0u32, NormBox::new(0.62, 0.6, 0.45, 0.5).unwrap()),
    ];
    let targets = super::assign_targets(&gts, config)?;
    let ctx = targets.loss_ctx(config);

    let names: Vec<String> = weights.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs = vec![image];
    for (_, t) in weights.iter() {
        inputs.push(t.clone());
    }
    let cfg = config.clone();
    let err = max_grad_error(
        &move |tape, ids| {
            let leaves = LeafIds {
                image: ids[0],
                weights: names
                    .iter()
                    .cloned()
                    .zip(ids[1..].iter().copied())
                    .collect(),
            };
            let heads = build_graph(tape, &leaves, &cfg).expect("graph build");
            let (loss, _) = tape.detection_loss(heads, ctx.clone());
            loss
        },
        &inputs,
        eps,
    );
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::init_weights;
    use crate::rng::Stream;

    fn rand_image(s: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Stream::new(seed);
        Tensor::from_vec(
            &[3, s, s],
            (0..3 * s * s)
                .map(|_| rng.range_f64(0.0, 1.0) as f32)
                .collect(),
        )
    }

    #[test]
    fn head_grids_match_strides() {
        let cfg = DetectorConfig::desk();
        let ws = init_weights::<f32>(&cfg, 0).unwrap();
        let preds = forward(&rand_image(128, 1), &ws, &cfg).unwrap();
        assert_eq!(preds.heads[0].stride, 8);
        assert_eq!(preds.heads[0].planes.dims3(), (6, 16, 16));
        assert_eq!(preds.heads[1].stride, 16);
        assert_eq!(preds.heads[1].planes.dims3(), (6, 8, 8));
    }

    #[test]
    fn zero_weights_give_logit_zero_objectness() {
        let cfg = DetectorConfig {
            cbam_enabled: false,
            ..DetectorConfig::desk()
        };
        let ws = init_weights::<f32>(&cfg, 0).unwrap();
        let zeroed = WeightSet::from_entries(
            ws.iter()
                .map(|(n, t)| {
                    let t = if n.ends_with(".w") {
                        Tensor::zeros(t.shape())
                    } else {
                        t.clone()
                    };
                    (n.to_string(), t)
                })
                .collect(),
        )
        .unwrap();
        let preds = forward(&rand_image(128, 2), &zeroed, &cfg).unwrap();
        for head in &preds.heads {
            let obj = head.planes.plane(0);
            assert!(obj.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_cbam_weights_scale_the_tail_by_a_quarter() {
        // With all-zero CBAM parameters both attention maps are exactly 0.5,
        // so enabling CBAM must equal scaling the stride-16 features by 0.25.
        let cfg_on = DetectorConfig::desk();
        let cfg_off = DetectorConfig {
            cbam_enabled: false,
            ..DetectorConfig::desk()
        };
        let ws_off = init_weights::<f32>(&cfg_off, 3).unwrap();

        // Same backbone weights plus zero CBAM parameters.
        let mut entries: Vec<(String, Tensor<f32>)> = ws_off
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (name, shape) in super::super::weight_shapes(&cfg_on) {
            if name.starts_with("cbam.") {
                entries.push((name, Tensor::zeros(&shape)));
            }
        }
        // Keep canonical order.
        let order: Vec<String> = super::super::weight_shapes(&cfg_on)
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        entries.sort_by_key(|(n, _)| order.iter().position(|o| o == n).unwrap());
        let ws_on = WeightSet::from_entries(entries).unwrap();

        let img = rand_image(128, 4);
        let with_cbam = forward(&img, &ws_on, &cfg_on).unwrap();

        // Reference: run the graph manually with the tail scaled by 0.25.
        let mut tape = Tape::<f32>::new();
        let leaves = LeafIds::create(&mut tape, &img, &ws_off);
        let stem = conv_norm_silu(&mut tape, leaves.image, &leaves, "stem.conv", 2).unwrap();
        let p4 = stage(&mut tape, stem, &leaves, "stage1").unwrap();
        let p8 = stage(&mut tape, p4, &leaves, "stage2").unwrap();
        let p16 = stage(&mut tape, p8, &leaves, "stage3").unwrap();
        let quarter = tape.leaf(Tensor::filled(&[cfg_on.stage_widths[3]], 0.25f32));
        let p16s = tape.mul_channel(p16, quarter);
        let up = tape.upsample2(p16s);
        let cat = tape.concat_channels(p8, up);
        let fused = conv_norm_silu(&mut tape, cat, &leaves, "neck.fuse", 1).unwrap();
        let h8 = conv_norm_silu(&mut tape, fused, &leaves, "head.s8.conv", 1).unwrap();
        let w8 = leaves.weight("head.s8.out.w").unwrap();
        let out8 = tape.conv2d(h8, w8, 1, 0);
        let h16 = conv_norm_silu(&mut tape, p16s, &leaves, "head.s16.conv", 1).unwrap();
        let w16 = leaves.weight("head.s16.out.w").unwrap();
        let out16 = tape.conv2d(h16, w16, 1, 0);

        let obj8 = tape.value(out8).plane(0).to_vec();
        let obj16 = tape.value(out16).plane(0).to_vec();
        assert_eq!(with_cbam.heads[0].planes.plane(0), obj8.as_slice());
        assert_eq!(with_cbam.heads[1].planes.plane(0), obj16.as_slice());
    }

    #[test]
    fn disabling_cbam_equals_a_weight_set_without_cbam_tensors() {
        let cfg_off = DetectorConfig {
            cbam_enabled: false,
            ..DetectorConfig::desk()
        };
        let ws_off = init_weights::<f32>(&cfg_off, 7).unwrap();
        let img = rand_image(128, 8);
        let a = forward(&img, &ws_off, &cfg_off).unwrap();
        let b = forward(&img, &ws_off, &cfg_off).unwrap();
        assert_eq!(a.heads[0].planes, b.heads[0].planes);
        assert_eq!(a.heads[1].planes, b.heads[1].planes);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let cfg = DetectorConfig::desk();
        let ws = init_weights::<f32>(&cfg, 9).unwrap();
        let entries: Vec<(String, Tensor<f32>)> = ws
            .iter()
            .map(|(n, t)| {
                if n == "neck.fuse.w" {
                    (n.to_string(), Tensor::zeros(&[1, 1, 3, 3]))
                } else {
                    (n.to_string(), t.clone())
                }
            })
            .collect();
        let bad = WeightSet::from_entries(entries).unwrap();
        let err = forward(&rand_image(128, 10), &bad, &cfg).unwrap_err();
        assert!(err.to_string().contains("neck.fuse"), "{err}");
    }
}
