//! Stem + appended conv + masked GAP + shared FC, with a classification
//! branch and a per-location class-activation branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{masked_gap, masked_gap_backward};
use super::preprocess::{corners_look_flat, PreprocessedImage};
use crate::error::{Error, Result};
use crate::fov::{compute_fov_mask, FovMask};
use crate::nn::{cross_entropy, softmax, Checkpoint, LayerSpec, Objective, Sequential};
use crate::outcome::{ImageProbability, Method};
use crate::tensor::{Scalar, Tensor};

pub const IMAGE_MODEL: &str = "whole-image";
pub const CLASSES: usize = 2;
/// Shared FC weights start at this fraction of He-normal scale.
pub const CLASSIFIER_INIT_SCALE: f64 = 0.1;

/// What the rest of the model relies on from a convolutional stem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemContract {
    pub input_size: usize,
    pub output_size: usize,
    pub channels: usize,
    pub layers: Vec<LayerSpec>,
    pub trainable: bool,
    /// Stem learning rate relative to the head's.
    pub lr_multiplier: f64,
}

impl StemContract {
    /// Stride-2 3×3 conv + ReLU blocks, one per entry of `widths`.
    pub fn desk(input_size: usize, widths: &[usize]) -> Result<StemContract> {
        let mut layers = Vec::new();
        let mut c = 1;
        for &w in widths {
            layers.push(LayerSpec::conv(c, w, 3, 2, 1));
            layers.push(LayerSpec::Relu);
            c = w;
        }
        let shape = output_of(input_size, &layers)?;
        Ok(StemContract {
            input_size,
            output_size: shape[1],
            channels: c,
            layers,
            trainable: true,
            lr_multiplier: 1e-2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shape = output_of(self.input_size, &self.layers)?;
        let declared = [self.channels, self.output_size, self.output_size];
        if shape != declared {
            return Err(Error::Config(format!(
                "stem produces {shape:?}, contract declares {declared:?}"
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.input_size, self.input_size]
    }

    /// Number of parameter tensors the stem contributes.
    pub fn param_tensors(&self) -> usize {
        self.layers.iter().map(|l| l.param_shapes().len()).sum()
    }
}

impl Default for StemContract {
    /// 272×272×1 → 17×17×64.
    fn default() -> Self {
        StemContract::desk(272, &[8, 16, 32, 64]).expect("valid desk stem")
    }
}

fn output_of(input_size: usize, layers: &[LayerSpec]) -> Result<Vec<usize>> {
    if layers.is_empty() {
        return Err(Error::Config("stem has no layers".into()));
    }
    let mut shape = vec![1, input_size, input_size];
    for l in layers {
        shape = l.output_shape(&shape)?;
    }
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::Config(format!("stem output {shape:?} is not a square map")));
    }
    Ok(shape)
}

/// Stem weights in the shared checkpoint container, network name `stem`.
pub fn stem_checkpoint(contract: &StemContract, stem: &Sequential<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new("stem", 0, 0);
    ck.add_network("stem", &contract.input_shape(), contract.layers.clone());
    for (name, p) in stem.param_names().into_iter().zip(stem.params()) {
        ck.push_tensor(format!("stem.{name}"), p.clone());
    }
    ck
}

/// Parameters of a stem weight file, checked against the contract.
pub fn load_stem_weights(contract: &StemContract, ck: &Checkpoint) -> Result<Vec<Tensor<f32>>> {
    let entry = ck.network("stem")?;
    if entry.layers != contract.layers || entry.input_shape != contract.input_shape() {
        return Err(Error::Config("stem weight file does not match the stem contract".into()));
    }
    let net = Sequential::<f32>::zeroed(&entry.input_shape, &entry.layers)?;
    net.param_names()
        .iter()
        .zip(net.params())
        .map(|(name, p)| {
            let t = ck.tensor(&format!("stem.{name}"))?;
            t.expect_shape(p.shape())?;
            Ok(t.clone())
        })
        .collect()
}

/// Per-location class scores over the S×S feature grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassActivationMap {
    pub size: usize,
    pub classes: usize,
    /// `[K, S, S]` affine scores before the softmax.
    pub scores: Vec<f64>,
    /// `[K, S, S]` per-location softmax of `scores`.
    pub probabilities: Vec<f64>,
}

impl ClassActivationMap {
    pub fn class_plane(&self, class: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.probabilities[class * n..(class + 1) * n]
    }

    pub fn score_plane(&self, class: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.scores[class * n..(class + 1) * n]
    }

    /// One row per location: `x y score_k... p_k...`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("x\ty");
        for k in 0..self.classes {
            out.push_str(&format!("\tscore_{k}"));
        }
        for k in 0..self.classes {
            out.push_str(&format!("\tp_{k}"));
        }
        out.push('\n');
        for y in 0..self.size {
            for x in 0..self.size {
                out.push_str(&format!("{x}\t{y}"));
                for k in 0..self.classes {
                    out.push_str(&format!("\t{}", self.score_plane(k)[y * self.size + x]));
                }
                for k in 0..self.classes {
                    out.push_str(&format!("\t{}", self.class_plane(k)[y * self.size + x]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Both heads evaluated from one stem pass.
#[derive(Clone, Debug)]
pub struct ImageEvaluation {
    pub logits: [f64; CLASSES],
    pub probabilities: [f64; CLASSES],
    pub cam: ClassActivationMap,
    /// Input looked unextrapolated (flat outside the circle).
    pub flat_corners: bool,
}

impl ImageEvaluation {
    pub fn probability(&self) -> ImageProbability {
        ImageProbability {
            p_carcinoma: self.probabilities[1],
            method: Method::Image,
        }
    }
}

/// Forward state kept for backpropagation.
pub struct ImageForward<T> {
    features: crate::nn::Forward<T>,
    classifier: crate::nn::Forward<T>,
    pub probabilities: Tensor<T>,
    mask: FovMask,
}

impl<T> ImageForward<T> {
    pub fn activation_pattern(&self) -> u64 {
        self.features.activation_pattern()
    }
}

#[derive(Clone, Debug)]
pub struct WholeImageModel<T = f32> {
    pub stem: StemContract,
    /// Stem layers followed by the appended 3×3 conv and ReLU.
    pub features: Sequential<T>,
    /// Shared affine map C → K.
    pub classifier: Sequential<T>,
}

impl<T: Scalar> WholeImageModel<T> {
    fn feature_specs(stem: &StemContract) -> Vec<LayerSpec> {
        let mut specs = stem.layers.clone();
        specs.push(LayerSpec::conv(stem.channels, stem.channels, 3, 1, 1));
        specs.push(LayerSpec::Relu);
        specs
    }

    pub fn build(stem: StemContract, rng: &mut impl Rng) -> Result<Self> {
        stem.validate()?;
        let features = Sequential::build(&stem.input_shape(), &Self::feature_specs(&stem), rng)?;
        let mut classifier = Sequential::build(&[stem.channels], &[LayerSpec::fc(stem.channels, CLASSES)], rng)?;
        // start near uniform class probabilities
        classifier.params_mut()[0].scale(T::from_f64(CLASSIFIER_INIT_SCALE));
        Ok(WholeImageModel {
            stem,
            features,
            classifier,
        })
    }

    pub fn zeroed(stem: StemContract) -> Result<Self> {
        stem.validate()?;
        Ok(WholeImageModel {
            features: Sequential::zeroed(&stem.input_shape(), &Self::feature_specs(&stem))?,
            classifier: Sequential::zeroed(&[stem.channels], &[LayerSpec::fc(stem.channels, CLASSES)])?,
            stem,
        })
    }

    pub fn cast<U: Scalar>(&self) -> WholeImageModel<U> {
        WholeImageModel {
            stem: self.stem.clone(),
            features: self.features.cast(),
            classifier: self.classifier.cast(),
        }
    }

    /// Replaces the stem parameters, e.g. from [`load_stem_weights`].
    pub fn set_stem_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        let n = self.stem.param_tensors();
        if params.len() != n {
            return Err(Error::Config(format!("expected {n} stem tensors, got {}", params.len())));
        }
        for (slot, p) in self.features.params_mut().into_iter().zip(params) {
            p.expect_shape(slot.shape())?;
            *slot = p;
        }
        Ok(())
    }

    pub fn feature_size(&self) -> usize {
        self.stem.output_size
    }

    /// FOV mask on the feature grid for an input-scale radius.
    pub fn feature_mask(&self, fov_radius: f64) -> Result<FovMask> {
        let s = self.feature_size();
        let mask = compute_fov_mask(s, s, fov_radius * s as f64 / self.stem.input_size as f64)?;
        if mask.is_empty() {
            return Err(Error::Pooling(format!("radius {fov_radius} leaves no feature location")));
        }
        Ok(mask)
    }

    /// All parameter tensors: features (stem first), then classifier.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.features.params();
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.features.params_mut();
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.features.param_names().into_iter().map(|n| format!("features.{n}")).collect();
        names.extend(self.classifier.param_names().into_iter().map(|n| format!("classifier.{n}")));
        names
    }

    fn shared_fc(&self) -> (&Tensor<T>, &Tensor<T>) {
        let p = &self.classifier.layers()[0].params;
        (&p[0], &p[1])
    }

    /// Classification and CAM from a single stem evaluation.
    pub fn evaluate(&self, input: &Tensor<T>, fov_radius: f64) -> Result<ImageEvaluation> {
        let mask = self.feature_mask(fov_radius)?;
        let u = self.features.infer(input)?;
        // the head is evaluated in f64 so its logits and the CAM agree to rounding
        let pooled = masked_gap(&u.cast::<f64>(), &mask)?;
        let (w, b) = self.shared_fc();
        let c = pooled.len();
        let logits: [f64; CLASSES] = std::array::from_fn(|k| {
            to_f64(b.data()[k])
                + w.data()[k * c..(k + 1) * c]
                    .iter()
                    .zip(pooled.data())
                    .map(|(&wv, &p)| to_f64(wv) * p)
                    .sum::<f64>()
        });
        let probs = softmax(&logits);
        let flat_corners = {
            let f32_input: Tensor<f32> = input.cast();
            corners_look_flat(&f32_input, fov_radius)
        };
        if flat_corners {
            log::warn!("input looks unextrapolated: flat outside the field of view");
        }
        Ok(ImageEvaluation {
            logits,
            probabilities: [probs[0], probs[1]],
            cam: self.cam_from_features(&u),
            flat_corners,
        })
    }

    /// Applies the shared FC at every location, then a per-location softmax.
    pub fn cam_from_features(&self, u: &Tensor<T>) -> ClassActivationMap {
        let (c, s) = (u.shape()[0], u.shape()[1]);
        let n = s * s;
        let (w, b) = self.shared_fc();
        let mut scores = vec![0.0; CLASSES * n];
        for k in 0..CLASSES {
            let bias = to_f64(b.data()[k]);
            let row = &w.data()[k * c..(k + 1) * c];
            for loc in 0..n {
                scores[k * n + loc] = bias
                    + row
                        .iter()
                        .enumerate()
                        .map(|(ch, &wv)| to_f64(wv) * to_f64(u.data()[ch * n + loc]))
                        .sum::<f64>();
            }
        }
        let mut probabilities = vec![0.0; CLASSES * n];
        for loc in 0..n {
            let p = softmax(&[scores[loc], scores[n + loc]]);
            for k in 0..CLASSES {
                probabilities[k * n + loc] = p[k];
            }
        }
        ClassActivationMap {
            size: s,
            classes: CLASSES,
            scores,
            probabilities,
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mask: &FovMask) -> Result<ImageForward<T>> {
        let features = self.features.forward(input)?;
        let pooled = masked_gap(&features.output, mask)?;
        let classifier = self.classifier.forward(&pooled)?;
        let probs: Vec<T> = softmax(classifier.output.data());
        Ok(ImageForward {
            features,
            classifier,
            probabilities: Tensor::new(vec![CLASSES], probs)?,
            mask: mask.clone(),
        })
    }

    /// Cross-entropy loss and gradients for every tensor in [`Self::params`].
    pub fn backward(&self, fwd: &ImageForward<T>, label: usize) -> Result<(f64, Vec<Tensor<T>>)> {
        let ce = cross_entropy(&fwd.probabilities, label)?;
        let head = self.classifier.backward(&fwd.classifier, &ce.grad_logits)?;
        let grad_u = masked_gap_backward(&head.input_grad, &fwd.mask, self.stem.channels)?;
        let body = self.features.backward_params(&fwd.features, &grad_u)?;
        let mut grads = body.param_grads;
        grads.extend(head.param_grads);
        Ok((ce.loss, grads))
    }
}

impl WholeImageModel<f32> {
    pub fn classify(&self, image: &PreprocessedImage) -> Result<ImageEvaluation> {
        self.evaluate(&image.tensor, image.fov_radius)
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(IMAGE_MODEL, seed, step);
        ck.add_network("features", self.features.input_shape(), self.features.specs());
        ck.add_network("classifier", self.classifier.input_shape(), self.classifier.specs());
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            ck.push_tensor(name, p.clone());
        }
        ck.manifest.metadata.insert("stem".into(), serde_json::to_string(&self.stem)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.manifest.model != IMAGE_MODEL {
            return Err(Error::Decode(format!("expected {IMAGE_MODEL}, found {}", ck.manifest.model)));
        }
        let stem: StemContract = serde_json::from_str(
            ck.manifest
                .metadata
                .get("stem")
                .ok_or_else(|| Error::Decode("missing stem contract".into()))?,
        )?;
        let mut model = WholeImageModel::zeroed(stem)?;
        if model.features.specs() != ck.network("features")?.layers
            || model.classifier.specs() != ck.network("classifier")?.layers
        {
            return Err(Error::Decode("layer specs disagree with the stem contract".into()));
        }
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = ck.tensor(name)?;
            t.expect_shape(p.shape())?;
            *p = t.clone();
        }
        Ok(model)
    }
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Loss of a whole-image model through masked pooling, for gradient checks.
pub struct ImageObjective {
    pub model: WholeImageModel<f64>,
    pub mask: FovMask,
}

impl Objective for ImageObjective {
    fn param_names(&self) -> Vec<String> {
        self.model.param_names()
    }

    fn params(&self) -> Vec<&Tensor<f64>> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.model.params_mut()
    }

    fn loss(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, u64)> {
        let fwd = self.model.forward(input, &self.mask)?;
        Ok((cross_entropy(&fwd.probabilities, label)?.loss, fwd.activation_pattern()))
    }

    fn loss_and_grads(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, Vec<Tensor<f64>>)> {
        let fwd = self.model.forward(input, &self.mask)?;
        self.model.backward(&fwd, label)
    }
}
