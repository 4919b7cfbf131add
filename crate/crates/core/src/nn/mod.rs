//! Minimal CPU training substrate: layers with explicit forward/backward
//! passes, parameter containers, initializers, and optimizers.
//!
//! There is no tape or graph. Each layer caches what its backward pass needs
//! during forward, and trainers wire the passes together by hand. All
//! randomness flows through caller-provided seeded RNGs.

mod conv;
mod linear;
mod lstm;
mod norm;
mod ops;
mod optim;

pub use conv::Conv2d;
pub use linear::Linear;
pub use lstm::{Lstm, LstmState};
pub use norm::{BatchNorm1d, BatchNorm2d};
pub use ops::{Dropout, Elu, MaxPool2, Relu, global_avg_pool, global_avg_pool_backward};
pub use optim::{Adam, GradClip, Optimizer, RmsProp, Sgd};

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(shape.to_vec()))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Canonical little-endian float32 serialization of the parameter value.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.numel() * 4);
        for &v in self.value.as_standard_layout().as_slice().unwrap() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn load_le_bytes(&mut self, bytes: &[u8]) -> crate::Result<()> {
        if bytes.len() != self.numel() * 4 {
            return Err(crate::Error::InvalidInput(format!(
                "parameter byte length {} does not match shape (expected {})",
                bytes.len(),
                self.numel() * 4
            )));
        }
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.value = ArrayD::from_shape_vec(self.value.raw_dim(), vals).unwrap();
        Ok(())
    }
}

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Param {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let vals: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Param::new(ArrayD::from_shape_vec(shape.to_vec(), vals).unwrap())
}

/// Global L2 norm of the gradients of a parameter set.
pub fn grad_global_norm(params: &[&mut Param]) -> f32 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for &g in p.grad.iter() {
            sq += (g as f64) * (g as f64);
        }
    }
    (sq as f32).sqrt()
}

/// Scales gradients in place so the global norm does not exceed `max_norm`.
/// Returns the post-clip global norm.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f32) -> f32 {
    let norm = grad_global_norm(params);
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for p in params.iter_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
        max_norm
    } else {
        norm
    }
}
