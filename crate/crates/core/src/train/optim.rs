//! Optimizers over flat parameter buffers.

use std::ops::Range;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Plain SGD with L2 weight decay, restricted to the given spans.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(weight_decay: f64) -> Self {
        Sgd { weight_decay }
    }

    pub fn step(&self, params: &mut [f64], grads: &[f64], lr: f64, spans: &[Range<usize>]) {
        for span in spans {
            for i in span.clone() {
                params[i] -= lr * (grads[i] + self.weight_decay * params[i]);
            }
        }
    }
}
