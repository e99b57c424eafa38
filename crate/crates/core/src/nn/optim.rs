//! First-order optimizers: SGD with momentum, Adam, and AdaBound.
//!
//! AdaBound follows the published update rule: Adam-style moment estimates
//! whose per-parameter step size is clipped by bounds that converge to a
//! final SGD-like rate.

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam,
    AdaBound { final_lr: f64 },
}

pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// AdaBound with learning rate 0.01 (the configuration the ablation
    /// study selects).
    pub fn adabound_lr01() -> Self {
        Self::new(OptimizerKind::AdaBound { final_lr: 0.1 }, 1e-2)
    }

    /// AdaBound with its default learning rate.
    pub fn adabound_default() -> Self {
        Self::new(OptimizerKind::AdaBound { final_lr: 0.1 }, 1e-3)
    }

    /// Apply one update over the given parameter list. The list must present
    /// the same tensors in the same order on every call.
    pub fn step(&mut self, params: Vec<(&'static str, &mut Param)>) {
        let total: usize = params.iter().map(|(_, p)| p.len()).sum();
        if self.m.len() != total {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        let mut off = 0;
        for (_, p) in params {
            for i in 0..p.len() {
                let g = p.grad[i] as f64;
                let idx = off + i;
                match self.kind {
                    OptimizerKind::Sgd { momentum } => {
                        let vel = momentum * self.m[idx] as f64 + g;
                        self.m[idx] = vel as f32;
                        p.value[i] -= (self.lr * vel) as f32;
                    }
                    OptimizerKind::Adam => {
                        let m = self.beta1 * self.m[idx] as f64 + (1.0 - self.beta1) * g;
                        let v = self.beta2 * self.v[idx] as f64 + (1.0 - self.beta2) * g * g;
                        self.m[idx] = m as f32;
                        self.v[idx] = v as f32;
                        let mhat = m / bc1;
                        let vhat = v / bc2;
                        p.value[i] -= (self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
                    }
                    OptimizerKind::AdaBound { final_lr } => {
                        let m = self.beta1 * self.m[idx] as f64 + (1.0 - self.beta1) * g;
                        let v = self.beta2 * self.v[idx] as f64 + (1.0 - self.beta2) * g * g;
                        self.m[idx] = m as f32;
                        self.v[idx] = v as f32;
                        let vhat = v / bc2;
                        let lower = final_lr * (1.0 - 1.0 / ((1.0 - self.beta2) * t + 1.0));
                        let upper = final_lr * (1.0 + 1.0 / ((1.0 - self.beta2) * t));
                        let rate = (self.lr / bc1 / (vhat.sqrt() + self.eps)).clamp(lower, upper);
                        p.value[i] -= (rate * m) as f32;
                    }
                }
            }
            off += p.len();
        }
    }
}
