//! Adam optimizer over a [`ParamSet`].

use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-4)
    }
}

/// First/second-moment state, aligned with the parameter entries.
#[derive(Debug, Clone)]
pub struct Adam<E> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new<S: Scalar>(cfg: AdamConfig, params: &ParamSet<S>) -> Adam<E> {
        let (m, v) = params
            .entries()
            .iter()
            .map(|e| {
                (
                    vec![E::zero(); e.value.numel()],
                    vec![E::zero(); e.value.numel()],
                )
            })
            .unzip();
        Adam {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[E], &[E]) {
        (&self.m[id.0], &self.v[id.0])
    }

    /// Restore state from a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<E>>, v: Vec<Vec<E>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update over `(param, gradient)` pairs. Gradients must be finite;
    /// a non-finite gradient aborts the step naming the parameter.
    pub fn apply(
        &mut self,
        params: &mut ParamSet<E>,
        grads: &[(ParamId, Vec<E>)],
    ) -> Result<()> {
        for (id, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "non-finite gradient for parameter {}",
                    params.name(*id)
                )));
            }
        }
        self.step += 1;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one = E::one();
        let corr1 = E::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let corr2 = E::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = E::from_f64(self.cfg.lr);
        let eps = E::from_f64(self.cfg.eps);

        for (id, g) in grads {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let value = params.value_mut(*id).data_mut();
            debug_assert_eq!(g.len(), value.len());
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
