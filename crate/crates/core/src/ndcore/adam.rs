use super::matrix::{DenseMatrix, GradSlot};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: (usize, usize), config: AdamConfig) -> Self {
        Self {
            m: DenseMatrix::zeros(shape.0, shape.1),
            v: DenseMatrix::zeros(shape.0, shape.1),
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `slot.value` from `slot.grad`.
    /// The gradient is left in place.
    pub fn step(&mut self, slot: &mut GradSlot) {
        debug_assert_eq!(slot.value.shape(), self.m.shape());
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let params = slot.value.as_mut_slice();
        let grads = slot.grad.as_slice();
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
