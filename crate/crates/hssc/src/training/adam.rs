//! Adam optimizer over a parameter registry.
//!
//! Moments are stored as flat arrays in registry order, which is what makes
//! the optimizer state serializable: the arrays line up with the parameters
//! the same way checkpoints do. One [`Adam`] instance drives one parameter
//! group; training uses two, one for the codec networks and one for the
//! discriminator, so their bias-correction clocks stay independent.

use crate::error::{Error, Result};
use crate::tensor::Parameters;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    /// Completed steps, the bias-correction clock.
    pub(crate) t: u64,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Adam {
    /// Fresh optimizer for a group with `count` scalar parameters.
    pub fn new(lr: f64, count: usize) -> Adam {
        Adam {
            lr,
            t: 0,
            m: vec![0.0; count],
            v: vec![0.0; count],
        }
    }

    /// Rebuilds a mid-run optimizer from serialized state.
    pub(crate) fn restore(lr: f64, t: u64, m: Vec<f64>, v: Vec<f64>) -> Result<Adam> {
        if m.len() != v.len() {
            return Err(Error::format(format!(
                "optimizer moment arrays disagree: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Adam { lr, t, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently accumulated in the
    /// group. Gradients are left in place; the caller clears them before the
    /// next accumulation.
    pub fn step(&mut self, params: &mut dyn Parameters) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut i = 0usize;
        let mut overrun = false;
        params.visit_mut(&mut |p| {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (value, g) in values.iter_mut().zip(grads) {
                if i >= self.m.len() {
                    overrun = true;
                    return;
                }
                self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                i += 1;
            }
        });
        if overrun || i != self.m.len() {
            return Err(Error::config(format!(
                "optimizer state holds {} scalars but the group has {}",
                self.m.len(),
                if overrun { "more".to_string() } else { i.to_string() }
            )));
        }
        Ok(())
    }
}
