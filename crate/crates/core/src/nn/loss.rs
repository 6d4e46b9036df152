use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower bound applied to the target probability before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

pub struct CrossEntropy<T> {
    pub loss: f64,
    /// `p - onehot(label)`: gradient w.r.t. the logits feeding the softmax.
    pub grad_logits: Tensor<T>,
}

/// Cross-entropy of softmax probabilities against a class index.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<CrossEntropy<T>> {
    let p = probs.data();
    if probs.shape().len() != 1 {
        return Err(Error::Config(format!("expected class vector, got {:?}", probs.shape())));
    }
    if label >= p.len() {
        return Err(Error::Config(format!("label {label} out of range for {} classes", p.len())));
    }
    let total: f64 = p.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
    if (total - 1.0).abs() > 1e-5 || !total.is_finite() {
        return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
    }
    let target = p[label].to_f64().unwrap_or(0.0).max(LOG_CLAMP);
    let mut grad = probs.clone();
    grad.data_mut()[label] = grad.data()[label] - T::one();
    Ok(CrossEntropy {
        loss: -target.ln(),
        grad_logits: grad,
    })
}
