//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamRegistry;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per registry slot.
pub struct AdamW<E: Element> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    step: u64,
}

impl<E: Element> AdamW<E> {
    pub fn new(registry: &ParamRegistry<E>) -> Self {
        AdamW {
            m: registry.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: registry.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn state(&self) -> (&[Tensor<E>], &[Tensor<E>], u64) {
        (&self.m, &self.v, self.step)
    }

    pub(crate) fn from_state(m: Vec<Tensor<E>>, v: Vec<Tensor<E>>, step: u64) -> Self {
        AdamW { m, v, step }
    }

    /// One update over the whole registry. `grads` aligns with registry
    /// order; a missing entry is a zero gradient. A non-finite gradient
    /// rejects the step without touching weights or moments.
    pub fn step(
        &mut self,
        registry: &mut ParamRegistry<E>,
        grads: &[Option<Tensor<E>>],
        cfg: &OptimConfig,
    ) -> Result<()> {
        assert_eq!(grads.len(), self.m.len());
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter '{}'",
                        registry.get(i).name
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = E::from_f64(1.0 - cfg.beta1.powi(t));
        let bc2 = E::from_f64(1.0 - cfg.beta2.powi(t));
        let (b1, b2) = (E::from_f64(cfg.beta1), E::from_f64(cfg.beta2));
        let (lr, eps) = (E::from_f64(cfg.lr), E::from_f64(cfg.eps));
        let decay = E::from_f64(cfg.lr * cfg.weight_decay);
        let one = E::one();

        for (i, grad) in grads.iter().enumerate() {
            let param = registry.get_mut(i);
            let zero = Tensor::zeros(param.value.shape());
            let g = grad.as_ref().unwrap_or(&zero);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = param.value.data_mut();
            for j in 0..w.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - lr * (m_hat / (v_hat.sqrt() + eps));
                if param.decay {
                    w[j] = w[j] - decay * w[j];
                }
            }
        }
        Ok(())
    }
}
