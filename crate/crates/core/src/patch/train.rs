//! Patch classifier training: fixed epoch count, 3-fold rotation
//! augmentation, cross-entropy with ADAM.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{PatchModel, PatchNetTopology};
use super::ppf::{frame_grid, patch_tensor};
use crate::data::{Frame, Label};
use crate::error::{Error, Result};
use crate::fov::standardized_plane;
use crate::nn::{cross_entropy, Adam, AdamConfig};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpfConfig {
    pub topology: PatchNetTopology,
    pub stride: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs over which the learning rate ramps linearly up to its value.
    pub warmup_epochs: usize,
    /// Distinct patches drawn from each training frame's grid.
    pub patches_per_frame: usize,
    /// Undersample the majority class each epoch.
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for PpfConfig {
    fn default() -> Self {
        PpfConfig {
            topology: PatchNetTopology::default(),
            stride: 16,
            epochs: 60,
            learning_rate: 1e-2,
            batch_size: 16,
            warmup_epochs: 1,
            patches_per_frame: 2,
            balance_classes: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpfEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpfTrainLog {
    pub base_patches: usize,
    pub augmented_patches: usize,
    pub adam_steps: u64,
    pub epochs: Vec<PpfEpoch>,
}

/// Rotates a square patch by `quarter_turns` × 90° counter-clockwise.
pub fn rotate_quarter(data: &[f32], size: usize, quarter_turns: usize) -> Vec<f32> {
    let mut out = data.to_vec();
    for _ in 0..quarter_turns % 4 {
        let src = out.clone();
        for y in 0..size {
            for x in 0..size {
                // (x, y) <- (size-1-y, x)
                out[y * size + x] = src[x * size + (size - 1 - y)];
            }
        }
    }
    out
}

/// One original patch plus two distinct quarter-turn rotations of it.
pub fn augment_three_fold(patch: &Tensor<f32>, rng: &mut impl rand::Rng) -> Vec<Tensor<f32>> {
    let size = patch.shape()[1];
    let mut turns = [1usize, 2, 3];
    turns.shuffle(rng);
    let mut out = vec![patch.clone()];
    for &k in &turns[..2] {
        let data = rotate_quarter(patch.data(), size, k);
        out.push(Tensor::new(patch.shape().to_vec(), data).expect("same shape"));
    }
    out
}

/// Training patches with labels inherited from their frames.
pub fn training_patches(frames: &[&Frame], config: &PpfConfig) -> Result<(Vec<(Tensor<f32>, Label)>, usize)> {
    let size = config.topology.patch_size;
    let mut out = Vec::new();
    let mut base = 0;
    for (k, frame) in frames.iter().enumerate() {
        let grid = frame_grid(frame, size, config.stride)?;
        if grid.is_empty() {
            log::warn!("{}: no patch fits the field of view", frame.id);
            continue;
        }
        let plane = standardized_plane(frame)?;
        let mut rng = seed::rng(config.seed, &[seed::key("patches"), k as u64]);
        let chosen: Vec<(usize, usize)> = grid
            .origins
            .choose_multiple(&mut rng, config.patches_per_frame.min(grid.len()))
            .copied()
            .collect();
        for origin in chosen {
            base += 1;
            let patch = patch_tensor(&plane, origin, size);
            for p in augment_three_fold(&patch, &mut rng) {
                out.push((p, frame.label));
            }
        }
    }
    Ok((out, base))
}

pub fn train_ppf(frames: &[&Frame], config: &PpfConfig) -> Result<(PatchModel, PpfTrainLog)> {
    let has = |l: Label| frames.iter().any(|f| f.label == l);
    if !has(Label::Carcinoma) || !has(Label::ClinicallyNormal) {
        return Err(Error::Config("patch training needs both classes".into()));
    }
    if config.batch_size == 0 || config.patches_per_frame == 0 {
        return Err(Error::Config("batch size and patches per frame must be positive".into()));
    }
    let (samples, base) = training_patches(frames, config)?;
    let mut init_rng = seed::rng(config.seed, &[seed::key("init")]);
    let mut net = config.topology.build::<f32>(&mut init_rng)?;
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    let slots: Vec<(&[usize], f64)> = shapes.iter().map(|s| (s.as_slice(), config.learning_rate)).collect();
    let mut adam = Adam::new(AdamConfig::default(), &slots);

    let by_class = |l: Label| -> Vec<usize> { (0..samples.len()).filter(|&i| samples[i].1 == l).collect() };
    let positives = by_class(Label::Carcinoma);
    let negatives = by_class(Label::ClinicallyNormal);
    let mut order_rng = seed::rng(config.seed, &[seed::key("order")]);
    let mut log = PpfTrainLog {
        base_patches: base,
        augmented_patches: samples.len(),
        adam_steps: 0,
        epochs: Vec::with_capacity(config.epochs),
    };
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = if config.balance_classes {
            let n = positives.len().min(negatives.len());
            let mut pick = |v: &Vec<usize>| v.choose_multiple(&mut order_rng, n).copied().collect::<Vec<_>>();
            let mut o = pick(&positives);
            o.extend(pick(&negatives));
            o
        } else {
            (0..samples.len()).collect()
        };
        order.shuffle(&mut order_rng);
        let steps_per_epoch = order.len().div_ceil(config.batch_size) as u64;
        let warmup_steps = config.warmup_epochs as u64 * steps_per_epoch;
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            for &i in batch {
                let (x, label) = &samples[i];
                let fwd = net.forward(x)?;
                let ce = cross_entropy(&fwd.output, label.index())?;
                total_loss += ce.loss;
                let back = net.backward_params_from_logits(&fwd, &ce.grad_logits)?;
                match &mut grads {
                    None => grads = Some(back.param_grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&back.param_grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| g.scale(scale));
            if adam.steps() < warmup_steps {
                adam.set_lr_scale((adam.steps() + 1) as f64 / warmup_steps as f64);
            } else {
                adam.set_lr_scale(1.0);
            }
            adam.step(&mut net.params_mut(), &grads)?;
        }
        log.epochs.push(PpfEpoch {
            epoch,
            mean_loss: total_loss / order.len().max(1) as f64,
            samples: order.len(),
        });
        log::debug!("ppf epoch {epoch}: loss {:.4}", log.epochs.last().unwrap().mean_loss);
    }
    log.adam_steps = adam.steps();
    Ok((
        PatchModel {
            topology: config.topology,
            net,
        },
        log,
    ))
}
