//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard Adam. Defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: Vec<Slot>,
}

struct Slot {
    param: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f64) -> Adam {
        let slots = params
            .into_iter()
            .map(|p| {
                let n = p.numel();
                Slot {
                    param: p,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all registered parameters, then zero their grads.
    /// Every registered parameter must have a populated gradient.
    pub fn step(&mut self) -> Result<()> {
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.param.grad().is_none() {
                return Err(Error::Contract(format!(
                    "adam: registered parameter {i} has no gradient"
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for slot in &mut self.slots {
            let grad = slot.param.grad().expect("checked above");
            let mut data = slot.param.to_vec();
            for j in 0..data.len() {
                let g = grad[j];
                slot.m[j] = self.beta1 * slot.m[j] + (1.0 - self.beta1) * g;
                slot.v[j] = self.beta2 * slot.v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[j] / bc1;
                let v_hat = slot.v[j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            slot.param.set_data(data);
            slot.param.zero_grad();
        }
        Ok(())
    }
}
