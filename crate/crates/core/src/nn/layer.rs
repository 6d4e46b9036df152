use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{window_output, Scalar, Tensor};

/// One layer of a sequential network. Spatial layers take `[C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    /// Flattens its input; `inputs` must equal the input element count.
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerSpec::FullyConnected { inputs, outputs }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |channels: Option<usize>, kernel: usize, stride: usize, padding: usize| {
            let [c, h, w] = input else {
                return Err(Error::Config(format!("{self:?} expects [C, H, W], got {input:?}")));
            };
            if let Some(expected) = channels {
                if *c != expected {
                    return Err(Error::Shape {
                        expected: vec![expected, *h, *w],
                        actual: input.to_vec(),
                    });
                }
            }
            match (
                window_output(*h, kernel, stride, padding),
                window_output(*w, kernel, stride, padding),
            ) {
                (Some(ho), Some(wo)) => Ok((*c, ho, wo)),
                _ => Err(Error::Config(format!(
                    "{self:?} has no valid output for input {input:?}"
                ))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (_, ho, wo) = spatial(Some(in_channels), kernel, stride, padding)?;
                Ok(vec![out_channels, ho, wo])
            }
            LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                let (c, ho, wo) = spatial(None, kernel, stride, 0)?;
                Ok(vec![c, ho, wo])
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::Shape {
                        expected: vec![inputs],
                        actual: input.to_vec(),
                    });
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Config(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of (weight, bias), if the layer has parameters.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::FullyConnected { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::FullyConnected { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

/// Per-layer state retained by a training forward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv { cols: Vec<T>, in_shape: Vec<usize> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    AvgPool { in_shape: Vec<usize> },
    Fc { input: Vec<T>, in_shape: Vec<usize> },
    Relu { active: Vec<bool> },
    Softmax { output: Vec<T> },
}

impl<T> LayerCache<T> {
    /// Mixes the discrete activation pattern (ReLU gates, max-pool winners) into `h`.
    pub fn mix_pattern(&self, h: &mut u64) {
        let mut mix = |v: u64| *h = crate::seed::mix(*h ^ v);
        match self {
            LayerCache::Relu { active } => {
                for chunk in active.chunks(64) {
                    let bits = chunk
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (i, &a)| acc | ((a as u64) << i));
                    mix(bits);
                }
            }
            LayerCache::MaxPool { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
            _ => {}
        }
    }
}

pub(crate) fn im2col<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let plane = ho * wo;
    let mut cols = vec![T::zero(); c * kernel * kernel * plane];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let plane = ho * wo;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Mean of `values` accumulated in `f64`, in iteration order.
pub(crate) fn mean_f64<T: Scalar>(values: impl Iterator<Item = T>) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for v in values {
        sum += v.to_f64().unwrap_or(f64::NAN);
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Numerically stable softmax; exponent sums accumulate in `f64`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| T::from_f64(e / total)).collect()
}

#[derive(Clone, Debug)]
pub struct Layer<T = f32> {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// `[weight, bias]` for conv/FC, empty otherwise.
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// A layer with zeroed parameters, validated against `input_shape`.
    pub fn new(spec: LayerSpec, input_shape: &[usize]) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        Ok(Layer {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            params: spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn forward(&self, input: &Tensor<T>, keep_cache: bool) -> Result<(Tensor<T>, Option<LayerCache<T>>)> {
        input.expect_shape(&self.input_shape)?;
        let x = input.data();
        let (out, cache) = match self.spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let [c, h, w] = self.input_shape[..] else { unreachable!() };
                let (ho, wo) = (self.output_shape[1], self.output_shape[2]);
                let cols = im2col(x, (c, h, w), kernel, stride, padding, (ho, wo));
                let plane = ho * wo;
                let rows = c * kernel * kernel;
                let bias = self.params[1].data();
                let mut out = Vec::with_capacity(out_channels * plane);
                for &b in bias {
                    out.extend(std::iter::repeat(b).take(plane));
                }
                T::gemm(
                    out_channels,
                    rows,
                    plane,
                    T::one(),
                    self.params[0].data(),
                    false,
                    &cols,
                    false,
                    T::one(),
                    &mut out,
                );
                let cache = keep_cache.then(|| LayerCache::Conv {
                    cols,
                    in_shape: self.input_shape.clone(),
                });
                (out, cache)
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let [c, h, w] = self.input_shape[..] else { unreachable!() };
                let (ho, wo) = (self.output_shape[1], self.output_shape[2]);
                let mut out = Vec::with_capacity(c * ho * wo);
                let mut argmax = Vec::with_capacity(c * ho * wo);
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut best = ch * h * w + oy * stride * w + ox * stride;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                    if x[idx] > x[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(x[best]);
                            argmax.push(best);
                        }
                    }
                }
                let cache = keep_cache.then(|| LayerCache::MaxPool {
                    argmax,
                    in_shape: self.input_shape.clone(),
                });
                (out, cache)
            }
            LayerSpec::AvgPool { kernel, stride } => {
                let [c, h, w] = self.input_shape[..] else { unreachable!() };
                let (ho, wo) = (self.output_shape[1], self.output_shape[2]);
                let mut out = Vec::with_capacity(c * ho * wo);
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let window = (0..kernel).flat_map(|ky| {
                                let row = ch * h * w + (oy * stride + ky) * w + ox * stride;
                                x[row..row + kernel].iter().copied()
                            });
                            out.push(T::from_f64(mean_f64(window).unwrap_or(0.0)));
                        }
                    }
                }
                let cache = keep_cache.then(|| LayerCache::AvgPool {
                    in_shape: self.input_shape.clone(),
                });
                (out, cache)
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                let mut out = self.params[1].data().to_vec();
                T::gemm(
                    outputs,
                    inputs,
                    1,
                    T::one(),
                    self.params[0].data(),
                    false,
                    x,
                    false,
                    T::one(),
                    &mut out,
                );
                let cache = keep_cache.then(|| LayerCache::Fc {
                    input: x.to_vec(),
                    in_shape: self.input_shape.clone(),
                });
                (out, cache)
            }
            LayerSpec::Relu => {
                let active: Vec<bool> = x.iter().map(|&v| v > T::zero()).collect();
                let out = x
                    .iter()
                    .zip(&active)
                    .map(|(&v, &a)| if a { v } else { T::zero() })
                    .collect();
                (out, keep_cache.then_some(LayerCache::Relu { active }))
            }
            LayerSpec::Softmax => {
                let out = softmax(x);
                let cache = keep_cache.then(|| LayerCache::Softmax { output: out.clone() });
                (out, cache)
            }
        };
        Ok((Tensor::new(self.output_shape.clone(), out)?, cache))
    }

    /// Returns (gradient w.r.t. input, gradients w.r.t. params).
    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        self.backward_with(cache, grad_out, true)
    }

    /// Like [`Self::backward`]; with `input_grad == false` a convolution returns
    /// a zero input gradient and skips computing it.
    pub(crate) fn backward_with(
        &self,
        cache: &LayerCache<T>,
        grad_out: &Tensor<T>,
        input_grad: bool,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        grad_out.expect_shape(&self.output_shape)?;
        let g = grad_out.data();
        let mismatch = || Error::Usage(format!("cache does not belong to layer {:?}", self.spec));
        let (grad_in, param_grads) = match (self.spec, cache) {
            (
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                },
                LayerCache::Conv { cols, in_shape },
            ) => {
                let [c, h, w] = in_shape[..] else { return Err(mismatch()) };
                let (ho, wo) = (self.output_shape[1], self.output_shape[2]);
                let plane = ho * wo;
                let rows = c * kernel * kernel;
                let mut dw = vec![T::zero(); out_channels * rows];
                T::gemm(out_channels, plane, rows, T::one(), g, false, cols, true, T::zero(), &mut dw);
                let db: Vec<T> = g
                    .chunks(plane)
                    .map(|ch| T::from_f64(ch.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum()))
                    .collect();
                let dx = if input_grad {
                    let mut dcols = vec![T::zero(); rows * plane];
                    T::gemm(
                        rows,
                        out_channels,
                        plane,
                        T::one(),
                        self.params[0].data(),
                        true,
                        g,
                        false,
                        T::zero(),
                        &mut dcols,
                    );
                    col2im(&dcols, (c, h, w), kernel, stride, padding, (ho, wo))
                } else {
                    vec![T::zero(); c * h * w]
                };
                (
                    dx,
                    vec![
                        Tensor::new(self.params[0].shape().to_vec(), dw)?,
                        Tensor::new(vec![out_channels], db)?,
                    ],
                )
            }
            (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax, in_shape }) => {
                let mut dx = vec![T::zero(); in_shape.iter().product()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
                (dx, Vec::new())
            }
            (LayerSpec::AvgPool { kernel, stride }, LayerCache::AvgPool { in_shape }) => {
                let [c, h, w] = in_shape[..] else { return Err(mismatch()) };
                let (ho, wo) = (self.output_shape[1], self.output_shape[2]);
                let scale = T::from_f64(1.0 / (kernel * kernel) as f64);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = g[(ch * ho + oy) * wo + ox] * scale;
                            for ky in 0..kernel {
                                let row = ch * h * w + (oy * stride + ky) * w + ox * stride;
                                dx[row..row + kernel].iter_mut().for_each(|d| *d += gv);
                            }
                        }
                    }
                }
                (dx, Vec::new())
            }
            (LayerSpec::FullyConnected { inputs, outputs }, LayerCache::Fc { input, .. }) => {
                let mut dw = vec![T::zero(); outputs * inputs];
                T::gemm(outputs, 1, inputs, T::one(), g, false, input, false, T::zero(), &mut dw);
                let mut dx = vec![T::zero(); inputs];
                T::gemm(inputs, outputs, 1, T::one(), self.params[0].data(), true, g, false, T::zero(), &mut dx);
                (
                    dx,
                    vec![
                        Tensor::new(vec![outputs, inputs], dw)?,
                        Tensor::new(vec![outputs], g.to_vec())?,
                    ],
                )
            }
            (LayerSpec::Relu, LayerCache::Relu { active }) => {
                let dx = g
                    .iter()
                    .zip(active)
                    .map(|(&gv, &a)| if a { gv } else { T::zero() })
                    .collect();
                (dx, Vec::new())
            }
            (LayerSpec::Softmax, LayerCache::Softmax { output }) => {
                // dx_i = p_i (g_i - sum_j g_j p_j)
                let dot: f64 = g
                    .iter()
                    .zip(output)
                    .map(|(a, b)| (*a * *b).to_f64().unwrap_or(f64::NAN))
                    .sum();
                let dot = T::from_f64(dot);
                let dx = g.iter().zip(output).map(|(&gv, &p)| p * (gv - dot)).collect();
                (dx, Vec::new())
            }
            _ => return Err(mismatch()),
        };
        Ok((Tensor::new(self.input_shape.clone(), grad_in)?, param_grads))
    }
}
