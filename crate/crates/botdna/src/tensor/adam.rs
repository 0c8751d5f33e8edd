//! Bias-corrected Adam over a [`ParamStore`].

use super::{ParamStore, Tensor, TensorError};

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        Adam::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, param) in store.iter_mut().enumerate() {
            if !param.grad.is_finite() {
                return Err(TensorError::NonFinite { op: "adam" });
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let grad = param.grad.data();
            for ((value, (&g, mi)), vi) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.iter().zip(m.iter_mut()))
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
