//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::loss::cross_entropy;
use super::network::Sequential;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter limit above which finite differencing is refused.
pub const MAX_CHECKED_PARAMS: usize = 100_000;

/// A scalar loss over `f64` parameters whose gradient can be checked.
pub trait Objective {
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Tensor<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>>;
    /// Loss plus a hash of the discrete activation pattern at this point.
    fn loss(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, u64)>;
    fn loss_and_grads(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, Vec<Tensor<f64>>)>;
}

impl Objective for Sequential<f64> {
    fn param_names(&self) -> Vec<String> {
        Sequential::param_names(self)
    }

    fn params(&self) -> Vec<&Tensor<f64>> {
        Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        Sequential::params_mut(self)
    }

    fn loss(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, u64)> {
        let fwd = self.forward(input)?;
        Ok((cross_entropy(&fwd.output, label)?.loss, fwd.activation_pattern()))
    }

    fn loss_and_grads(&self, input: &Tensor<f64>, label: usize) -> Result<(f64, Vec<Tensor<f64>>)> {
        let fwd = self.forward(input)?;
        let ce = cross_entropy(&fwd.output, label)?;
        let back = self.backward_from_logits(&fwd, &ce.grad_logits)?;
        Ok((ce.loss, back.param_grads))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components whose ±h probes changed the activation pattern (ReLU or pooling kinks).
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Relative error with a floor so that two vanishing gradients compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn gradient_check<O: Objective>(
    objective: &mut O,
    input: &Tensor<f64>,
    label: usize,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let total: usize = objective.params().iter().map(|p| p.len()).sum();
    if total > MAX_CHECKED_PARAMS {
        return Err(Error::Config(format!(
            "{total} parameters exceed the finite-difference limit of {MAX_CHECKED_PARAMS}"
        )));
    }
    let (_, analytic) = objective.loss_and_grads(input, label)?;
    let (_, base_pattern) = objective.loss(input, label)?;
    let names = objective.param_names();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic[t].len();
        let mut check = TensorCheck {
            name,
            max_rel_error: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for i in 0..len {
            let original = objective.params()[t].data()[i];
            objective.params_mut()[t].data_mut()[i] = original + h;
            let (plus, plus_pattern) = objective.loss(input, label)?;
            objective.params_mut()[t].data_mut()[i] = original - h;
            let (minus, minus_pattern) = objective.loss(input, label)?;
            objective.params_mut()[t].data_mut()[i] = original;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[t].data()[i], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            check.checked += 1;
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tolerance: tol, tensors })
}
