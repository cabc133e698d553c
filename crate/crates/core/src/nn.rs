//! Bare-bones neural-net internals shared by the trainable encoder and the
//! classification head: activations, seeded initialization, and a
//! decoupled-weight-decay Adam optimizer.
//!
//! Everything is plain `f64` with hand-written gradients; analytic gradients
//! are cross-checked against central finite differences in the test suite.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Uniform init in `[-scale, scale]`.
pub fn uniform_init(rng: &mut SplitMix64, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect()
}

/// Adam with decoupled weight decay. Weight decay is applied directly to the
/// parameters, not folded into the gradient.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    /// One update over a parameter block. `state.t` must already count this
    /// step (call [`AdamState::advance`] once per optimizer step).
    pub fn step(&self, state: &mut AdamState, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), state.m.len());
        let t = state.t as i32;
        let bias1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bias2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..params.len() {
            params[i] -= self.learning_rate * self.weight_decay * params[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * grads[i];
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = state.m[i] / bias1;
            let v_hat = state.v[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

/// First and second moment buffers for one parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }
}
