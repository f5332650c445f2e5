//! AdamW: Adam moments with decoupled weight decay.

use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state aligned with a [`ParamStore`] by parameter order.
pub struct AdamW<F: Real> {
    pub cfg: AdamWConfig,
    t: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    frozen: Vec<bool>,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamWConfig) -> Self {
        let m = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let frozen = vec![false; store.len()];
        AdamW {
            cfg,
            t: 0,
            m,
            v,
            frozen,
        }
    }

    /// Exclude a parameter from every future update, including weight
    /// decay. For bookkeeping records stored alongside the weights.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. `grads` must align with the store (one tensor per
    /// parameter, zero tensors for parameters the loss did not touch).
    /// Weight decay is decoupled: it shrinks parameters directly instead of
    /// entering the moment estimates.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Tensor<F>]) {
        assert_eq!(grads.len(), store.len(), "gradient set misaligned");
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one_m_b1 = F::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = F::from_f64(1.0 - self.cfg.beta2);
        let corr1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let corr2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        let wd = F::from_f64(self.cfg.weight_decay);

        for (i, grad) in grads.iter().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(ParamId(i));
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_m_b1 * *gv;
                *vv = b2 * *vv + one_m_b2 * *gv * *gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pv);
            }
        }
    }
}
