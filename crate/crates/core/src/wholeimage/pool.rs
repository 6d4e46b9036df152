//! Global average pooling, optionally restricted to the field of view.

use crate::error::{Error, Result};
use crate::fov::FovMask;
use crate::nn::{mean_f64, Layer, LayerSpec};
use crate::tensor::{Scalar, Tensor};

fn spatial<T: Scalar>(u: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *u.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape {
            expected: vec![0, 0, 0],
            actual: s.to_vec(),
        }),
    }
}

/// Plain GAP over a C×H×W map, via an average-pooling layer spanning the map.
pub fn global_average_pool<T: Scalar>(u: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = spatial(u)?;
    if h != w {
        return Err(Error::Pooling(format!("GAP expects a square map, got {h}×{w}")));
    }
    let layer = Layer::<T>::new(LayerSpec::AvgPool { kernel: h, stride: h }, &[c, h, w])?;
    let (out, _) = layer.forward(u, false)?;
    out.reshape(&[c])
}

fn check_mask<T: Scalar>(u: &Tensor<T>, mask: &FovMask) -> Result<(usize, usize, usize)> {
    let (c, h, w) = spatial(u)?;
    if mask.width() != w || mask.height() != h {
        return Err(Error::Pooling(format!(
            "mask {}×{} does not match feature map {w}×{h}",
            mask.width(),
            mask.height()
        )));
    }
    if mask.is_empty() {
        return Err(Error::Pooling("empty mask".into()));
    }
    Ok((c, h, w))
}

/// Mean of each channel over the masked-in locations.
pub fn masked_gap<T: Scalar>(u: &Tensor<T>, mask: &FovMask) -> Result<Tensor<T>> {
    let (c, h, w) = check_mask(u, mask)?;
    let x = u.data();
    let out = (0..c)
        .map(|ch| {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            let inside = plane.iter().zip(mask.grid()).filter(|(_, &m)| m).map(|(&v, _)| v);
            T::from_f64(mean_f64(inside).expect("nonempty mask"))
        })
        .collect();
    Tensor::new(vec![c], out)
}

/// Gradient of [`masked_gap`]: `g_c / |mask|` inside the mask, exactly zero outside.
pub fn masked_gap_backward<T: Scalar>(grad: &Tensor<T>, mask: &FovMask, channels: usize) -> Result<Tensor<T>> {
    grad.expect_shape(&[channels])?;
    if mask.is_empty() {
        return Err(Error::Pooling("empty mask".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let count = mask.count() as f64;
    let mut out = Tensor::zeros(&[channels, h, w]);
    let data = out.data_mut();
    for ch in 0..channels {
        let g = T::from_f64(grad.data()[ch].to_f64().unwrap_or(f64::NAN) / count);
        for (slot, &m) in data[ch * h * w..(ch + 1) * h * w].iter_mut().zip(mask.grid()) {
            if m {
                *slot = g;
            }
        }
    }
    Ok(out)
}
