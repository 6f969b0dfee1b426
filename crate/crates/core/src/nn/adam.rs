use ndarray::Zip;

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update. Non-finite gradients abort the step before any
    /// parameter or moment is touched.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::config(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                store.len()
            )));
        }
        for (t, g) in store.tensors().iter().zip(grads.iter()) {
            if t.value.dim() != g.dim() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match {} {:?}",
                    g.dim(),
                    t.name,
                    t.value.dim()
                )));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite gradient {bad} for parameter {} at optimizer step {}",
                    t.name,
                    store.step() + 1
                )));
            }
        }

        let step = store.step() + 1;
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (t, g) in store.tensors_mut().iter_mut().zip(grads.iter()) {
            Zip::from(&mut t.value)
                .and(&mut t.adam_m)
                .and(&mut t.adam_v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        store.set_step(step);
        Ok(())
    }
}
