//! Minimal CPU neural-network stack.
//!
//! Feature maps travel as `Array4<f32>` in `(batch, channel, height, width)`
//! order; vectors ride along as `(batch, features, 1, 1)`. Every layer
//! implements explicit forward/backward passes, so gradients are available
//! both for training and for input attribution. All reductions run in a
//! fixed order, keeping results reproducible for a given seed.

mod conv;
mod layers;
mod loss;
mod optim;

pub use conv::Conv2d;
pub use layers::{
    AdaptiveAvgPool2d, AvgPool2d, BatchNorm2d, Flatten, GlobalAvgPool, Linear, MaxPool2d, ReLU,
    ResidualBlock,
};
pub use loss::{
    bce_with_logits_loss, cross_entropy_from_probs, focal_loss_from_probs, mse_loss, softmax_rows,
    Loss,
};
pub use optim::{Optimizer, OptimizerKind};

use ndarray::Array4;

/// One learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// A differentiable layer. `forward` caches whatever `backward` needs, so a
/// layer instance serves one pass at a time.
pub trait Layer: Send {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32>;

    /// Propagate `grad` (w.r.t. the last forward output) back to the input,
    /// accumulating parameter gradients along the way.
    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32>;

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        Vec::new()
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        Vec::new()
    }

    /// Non-learnable state that still belongs in checkpoints (running
    /// batch-norm statistics).
    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        Vec::new()
    }

    fn buffers_ref(&self) -> Vec<(&'static str, &Vec<f32>)> {
        Vec::new()
    }
}

/// Ordered stack of layers; itself a [`Layer`], so blocks can nest.
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.params_ref().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Fully-qualified parameter names, `"<layer index>.<tensor>"` with
    /// nested blocks flattened by the block itself.
    pub fn named_params_ref(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in layer.params_ref() {
                out.push((format!("{i}.{name}"), p));
            }
        }
        out
    }

    /// Snapshot of all parameters and buffers, used for best-epoch restore.
    pub fn state_snapshot(&self) -> Vec<Vec<f32>> {
        let mut out: Vec<Vec<f32>> = self
            .params_ref()
            .iter()
            .map(|(_, p)| p.value.clone())
            .collect();
        for layer in &self.layers {
            for (_, b) in layer.buffers_ref() {
                out.push(b.clone());
            }
        }
        out
    }

    pub fn restore_snapshot(&mut self, snapshot: &[Vec<f32>]) {
        let n_params = self.params_ref().len();
        for ((_, p), saved) in self.params_mut().into_iter().zip(snapshot) {
            p.value.copy_from_slice(saved);
        }
        let mut idx = n_params;
        for layer in &mut self.layers {
            for (_, b) in layer.buffers_mut() {
                b.copy_from_slice(&snapshot[idx]);
                idx += 1;
            }
        }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        self.layers.iter().flat_map(|l| l.params_ref()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }

    fn buffers_ref(&self) -> Vec<(&'static str, &Vec<f32>)> {
        self.layers.iter().flat_map(|l| l.buffers_ref()).collect()
    }
}

/// Kaiming-style uniform init over `fan_in`.
pub(crate) fn kaiming_uniform<R: rand::Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}
