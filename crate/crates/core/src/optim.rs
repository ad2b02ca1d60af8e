//! First-order optimizers and learning-rate schedules over flat parameter
//! slots.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction and one moment buffer per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, slot_sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "slot count");
        assert_eq!(grads.len(), self.m.len(), "slot count");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            assert_eq!(p.len(), m.len(), "slot {slot} size");
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Plain gradient descent, `p <- p - lr * g`.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, dx) in p.iter_mut().zip(g.iter()) {
            *x -= lr * dx;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over `horizon` steps.
    Cosine {
        horizon: usize,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { horizon } => {
                if horizon == 0 {
                    return base;
                }
                let progress = step.min(horizon) as f64 / horizon as f64;
                base * 0.5 * (1.0 + (PI * progress).cos())
            }
        }
    }
}
