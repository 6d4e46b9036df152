use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layer::{Layer, LayerCache, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A chain of layers with a fixed input shape.
#[derive(Clone, Debug)]
pub struct Sequential<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Output of a training forward pass together with everything backward needs.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub output: Tensor<T>,
    caches: Vec<LayerCache<T>>,
}

impl<T> Forward<T> {
    /// Hash of the discrete activation pattern (ReLU gates, pooling winners).
    pub fn activation_pattern(&self) -> u64 {
        let mut h = 0u64;
        self.caches.iter().for_each(|c| c.mix_pattern(&mut h));
        h
    }
}

pub struct Backward<T> {
    /// One gradient per parameter tensor, in [`Sequential::params`] order.
    pub param_grads: Vec<Tensor<T>>,
    pub input_grad: Tensor<T>,
}

impl<T: Scalar> Sequential<T> {
    /// Validates the layer chain against `input_shape` and initializes weights
    /// He-normal (std = sqrt(2 / fan_in)) with zero biases.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, specs)?;
        for layer in &mut net.layers {
            if layer.params.is_empty() {
                continue;
            }
            let std = (2.0 / layer.spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in layer.params[0].data_mut() {
                *w = T::from_f64(normal.sample(rng));
            }
        }
        Ok(net)
    }

    pub fn zeroed(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::new(*spec, &shape)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(Sequential {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("non-empty").output_shape
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kinds: &[&str] = if l.params.is_empty() { &[] } else { &["weight", "bias"] };
                kinds.iter().map(move |k| format!("layer{i}.{k}"))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    input_shape: l.input_shape.clone(),
                    output_shape: l.output_shape.clone(),
                    params: l.params.iter().map(|p| p.cast()).collect(),
                })
                .collect(),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Forward<T>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = self.check_input(input)?;
        for layer in &self.layers {
            let (out, cache) = layer.forward(&x, true)?;
            caches.push(cache.expect("cache requested"));
            x = out;
        }
        x.ensure_finite("network output")?;
        Ok(Forward { output: x, caches })
    }

    /// Forward pass without retaining activations.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = self.check_input(input)?;
        for layer in &self.layers {
            x = layer.forward(&x, false)?.0;
        }
        x.ensure_finite("network output")?;
        Ok(x)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.shape() == self.input_shape.as_slice() {
            return Ok(input.clone());
        }
        // FC-first networks accept any shape with the right element count.
        if matches!(self.layers[0].spec, LayerSpec::FullyConnected { .. }) && input.len() == self.layers[0].input_shape.iter().product::<usize>() {
            return input.clone().reshape(&self.input_shape);
        }
        Err(Error::Shape {
            expected: self.input_shape.clone(),
            actual: input.shape().to_vec(),
        })
    }

    /// Backpropagates `grad_output` (d loss / d output) through every layer.
    pub fn backward(&self, fwd: &Forward<T>, grad_output: &Tensor<T>) -> Result<Backward<T>> {
        self.backward_through(fwd, grad_output, self.layers.len(), true)
    }

    /// Like [`Self::backward`] but leaves `input_grad` at zero when the first
    /// layer is a convolution, which saves its most expensive product.
    pub fn backward_params(&self, fwd: &Forward<T>, grad_output: &Tensor<T>) -> Result<Backward<T>> {
        self.backward_through(fwd, grad_output, self.layers.len(), false)
    }

    /// Backpropagates a gradient w.r.t. the logits, i.e. the input of a final softmax.
    pub fn backward_from_logits(&self, fwd: &Forward<T>, grad_logits: &Tensor<T>) -> Result<Backward<T>> {
        self.logits_backward(fwd, grad_logits, true)
    }

    /// [`Self::backward_from_logits`] with the input gradient skipped as in [`Self::backward_params`].
    pub fn backward_params_from_logits(&self, fwd: &Forward<T>, grad_logits: &Tensor<T>) -> Result<Backward<T>> {
        self.logits_backward(fwd, grad_logits, false)
    }

    fn logits_backward(&self, fwd: &Forward<T>, grad_logits: &Tensor<T>, input_grad: bool) -> Result<Backward<T>> {
        match self.layers.last().map(|l| l.spec) {
            Some(LayerSpec::Softmax) => self.backward_through(fwd, grad_logits, self.layers.len() - 1, input_grad),
            _ => Err(Error::Usage("network does not end in softmax".into())),
        }
    }

    fn backward_through(&self, fwd: &Forward<T>, grad: &Tensor<T>, upto: usize, input_grad: bool) -> Result<Backward<T>> {
        if fwd.caches.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "forward cache has {} layers, network has {}",
                fwd.caches.len(),
                self.layers.len()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); upto];
        let mut g = grad.clone();
        for i in (0..upto).rev() {
            let (gi, pg) = self.layers[i].backward_with(&fwd.caches[i], &g, input_grad || i > 0)?;
            per_layer[i] = pg;
            g = gi;
        }
        let mut param_grads = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i < upto {
                param_grads.append(&mut per_layer[i]);
            } else {
                param_grads.extend(layer.params.iter().map(|p| Tensor::zeros(p.shape())));
            }
        }
        for pg in &param_grads {
            pg.ensure_finite("parameter gradient")?;
        }
        Ok(Backward {
            param_grads,
            input_grad: g,
        })
    }
}
