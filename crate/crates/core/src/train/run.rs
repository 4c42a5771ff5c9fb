//! The training loop: seeded shuffling, batched forward/backward with
//! data-parallel gradient computation, optimizer steps under the linear
//! schedule, and per-epoch loss logging.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::loss::LossComponents;
use crate::autodiff::Tape;
use crate::dataset::{image_path_for, label_path_for, parse_label_file, Manifest, Split};
use crate::detector::{
    assign_targets, build_graph, init_weights, DetectorConfig, LeafIds, Targets, WeightSet,
};
use crate::error::{Error, Result};
use crate::imagebuf::ImageBuf;
use crate::parallel::map_with_workers;
use crate::rng::Stream;
use crate::tensor::Tensor;

use super::optim::{adam_step, lr_linear, sgd_step, OptimizerKind, OptimizerState};

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub workers: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            epochs: 250,
            batch_size: 16,
            seed: 0,
            lr_initial: 0.01,
            lr_final: 0.001,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_obj: f64,
    pub loss_box: f64,
    pub loss_cls: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// One training image held in memory: pixels plus assigned targets.
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub targets: Targets,
}

/// Load every train-split image with its labels and assign targets once.
pub fn load_samples(
    manifest: &Manifest,
    manifest_path: &Path,
    config: &DetectorConfig,
) -> Result<Vec<Sample>> {
    let records: Vec<_> = manifest
        .images
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut samples = Vec::with_capacity(records.len());
    let s = config.input_size;
    for rec in records {
        let img = ImageBuf::load(&image_path_for(manifest_path, rec))?;
        if (img.width(), img.height()) != (s, s) {
            return Err(Error::Image {
                path: image_path_for(manifest_path, rec),
                message: format!(
                    "expected {s}x{s} input, got {}x{}",
                    img.width(),
                    img.height()
                ),
            });
        }
        let labels = parse_label_file(&label_path_for(manifest_path, &rec.id), false)?;
        let gts: Vec<(u32, crate::geometry::NormBox)> =
            labels.entries.iter().map(|e| (e.category_id, e.bbox)).collect();
        samples.push(Sample {
            id: rec.id.clone(),
            image: img.to_tensor(),
            targets: assign_targets(&gts, config)?,
        });
    }
    Ok(samples)
}

/// Forward + backward for one image; gradients come back aligned with the
/// weight set's canonical order.
fn grad_one(
    sample: &Sample,
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
) -> Result<(Vec<Tensor<f32>>, LossComponents)> {
    let mut tape = Tape::new();
    let leaves = LeafIds::create(&mut tape, &sample.image, weights);
    let heads = build_graph(&mut tape, &leaves, config)?;
    let (loss, comps) = tape.detection_loss(heads, sample.targets.loss_ctx(config));
    let grads = tape.backward(loss);
    let out = leaves
        .weights
        .iter()
        .zip(weights.iter())
        .map(|((_, id), (_, t))| grads.of(*id, t.shape()))
        .collect();
    Ok((out, comps))
}

/// Mean gradient over a batch, reduced in input order so worker count never
/// changes a bit of the result.
fn batch_gradients(
    batch: &[&Sample],
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
    workers: usize,
) -> Result<(Vec<Tensor<f32>>, LossComponents)> {
    let results: Vec<Result<(Vec<Tensor<f32>>, LossComponents)>> =
        map_with_workers(workers, batch, |s| grad_one(s, weights, config));

    let scale = 1.0 / batch.len() as f32;
    let mut acc: Option<Vec<Tensor<f32>>> = None;
    let mut comps = LossComponents::default();
    for r in results {
        let (grads, c) = r?;
        comps.total += c.total;
        comps.obj += c.obj;
        comps.bbox += c.bbox;
        comps.cls += c.cls;
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    let mut grads = acc.expect("non-empty batch");
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    let n = batch.len() as f64;
    comps.total /= n;
    comps.obj /= n;
    comps.bbox /= n;
    comps.cls /= n;
    Ok((grads, comps))
}

/// Train from scratch on the manifest's train split. Returns the final
/// weights and the per-epoch log; persisting both is the caller's job.
pub fn train(
    manifest: &Manifest,
    manifest_path: &Path,
    config: &DetectorConfig,
    opts: &TrainOptions,
) -> Result<(WeightSet<f32>, TrainLog)> {
    config.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let samples = load_samples(manifest, manifest_path, config)?;
    let mut weights = init_weights::<f32>(config, opts.seed)?;
    let mut state = OptimizerState::new(opts.optimizer, &weights);
    let mut log = TrainLog::default();

    let n = samples.len();
    let batches_per_epoch = n.div_ceil(opts.batch_size);
    let total_iters = (opts.epochs * batches_per_epoch).max(1);
    let mut iter = 0usize;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Stream::derived(opts.seed, &format!("epoch/{epoch}")).shuffle(&mut order);

        let mut epoch_comps = LossComponents::default();
        let epoch_lr = lr_linear(iter, total_iters, opts.lr_initial, opts.lr_final);
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (grads, comps) = batch_gradients(&batch, &weights, config, opts.workers)?;
            if !comps.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration: iter,
                });
            }
            let lr = lr_linear(iter, total_iters, opts.lr_initial, opts.lr_final);
            match opts.optimizer {
                OptimizerKind::Sgd => sgd_step(&mut weights, &grads, &mut state, lr)?,
                OptimizerKind::Adam => adam_step(&mut weights, &grads, &mut state, lr)?,
            }
            epoch_comps.total += comps.total;
            epoch_comps.obj += comps.obj;
            epoch_comps.bbox += comps.bbox;
            epoch_comps.cls += comps.cls;
            iter += 1;
        }
        let b = batches_per_epoch as f64;
        log.epochs.push(EpochLog {
            epoch,
            loss: epoch_comps.total / b,
            loss_obj: epoch_comps.obj / b,
            loss_box: epoch_comps.bbox / b,
            loss_cls: epoch_comps.cls / b,
            lr: epoch_lr,
        });
    }
    Ok((weights, log))
}
