//! AdamW: moment estimates with bias correction and decoupled weight decay.

use crate::gdit::ParamSet;
use crate::numeric::{Scalar, Tensor};

pub struct AdamW<F> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` must align with the parameter order.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Tensor<F>]) {
        assert_eq!(params.len(), grads.len(), "gradient/parameter mismatch");
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Tensor::zeros(g.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_m_b1 = F::from_f64(1.0 - self.beta1);
        let one_m_b2 = F::from_f64(1.0 - self.beta2);
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = F::from_f64(self.learning_rate);
        let wd = F::from_f64(self.weight_decay);
        let eps = F::from_f64(self.epsilon);

        for ((theta, grad), (m, v)) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            for (k, (t, &g)) in theta.data_mut().iter_mut().zip(grad.data()).enumerate() {
                md[k] = b1 * md[k] + one_m_b1 * g;
                vd[k] = b2 * vd[k] + one_m_b2 * g * g;
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                *t = *t - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *t);
            }
        }
    }
}
