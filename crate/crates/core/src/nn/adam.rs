use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Slot<T> {
    m: Tensor<T>,
    v: Tensor<T>,
    lr: f64,
}

/// Bias-corrected ADAM with a learning rate per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    config: AdamConfig,
    step: u64,
    lr_scale: f64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    /// One slot per `(shape, learning rate)`; moments start at zero.
    pub fn new(config: AdamConfig, params: &[(&[usize], f64)]) -> Self {
        Adam {
            config,
            step: 0,
            lr_scale: 1.0,
            slots: params
                .iter()
                .map(|(shape, lr)| Slot {
                    m: Tensor::zeros(shape),
                    v: Tensor::zeros(shape),
                    lr: *lr,
                })
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Multiplies every group's learning rate on subsequent steps (warmup).
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.lr_scale = scale;
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.lr).collect()
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::Config(format!(
                "optimizer has {} slots, got {} params and {} grads",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), slot) in params.iter().zip(grads).zip(&self.slots) {
            p.expect_shape(slot.m.shape())?;
            g.expect_shape(slot.m.shape())?;
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gf = gv.to_f64().unwrap_or(f64::NAN);
                let mf = beta1 * mv.to_f64().unwrap_or(0.0) + (1.0 - beta1) * gf;
                let vf = beta2 * vv.to_f64().unwrap_or(0.0) + (1.0 - beta2) * gf * gf;
                *mv = T::from_f64(mf);
                *vv = T::from_f64(vf);
                let update = self.lr_scale * slot.lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                *pv = T::from_f64(pv.to_f64().unwrap_or(f64::NAN) - update);
            }
            p.ensure_finite("parameter after ADAM step")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_never_moves_parameters() {
        let mut adam = Adam::<f32>::new(AdamConfig::default(), &[(&[3], 1e-2)]);
        let mut p = Tensor::new(vec![3], vec![0.3f32, -1.0, 2.0]).unwrap();
        let before = p.clone();
        for _ in 0..50 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 50);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), &[(&[1], 0.01)]);
        let mut p = scalar(0.0);
        adam.step(&mut [&mut p], &[scalar(1.0)]).unwrap();
        let expected = -0.01 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = Adam::<f32>::new(AdamConfig::default(), &[(&[2], 1e-3)]);
        let mut p = Tensor::<f32>::zeros(&[3]);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.steps(), 0);
    }
}
