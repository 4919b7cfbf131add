use ndarray::ArrayD;

use super::Param;

/// First-order optimizers over an ordered parameter list. State is keyed by
/// position, so callers must pass the same parameters in the same order on
/// every step.
pub trait Optimizer {
    fn step(&mut self, params: &mut [&mut Param]);

    fn zero_grad(&self, params: &mut [&mut Param]) {
        for p in params.iter_mut() {
            p.zero_grad();
        }
    }
}

/// SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<ArrayD<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            *v = &*v * self.momentum + &p.grad;
            p.value = &p.value - &(&*v * self.lr);
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = &*m * self.beta1 + &(&p.grad * (1.0 - self.beta1));
            *v = &*v * self.beta2 + &(&p.grad.mapv(|g| g * g) * (1.0 - self.beta2));
            let mhat = &*m / bc1;
            let vhat = &*v / bc2;
            let upd = ndarray::Zip::from(&mhat)
                .and(&vhat)
                .map_collect(|&mm, &vv| self.lr * mm / (vv.sqrt() + self.eps));
            p.value = &p.value - &upd;
        }
    }
}

/// RMSProp with a running mean of squared gradients.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f32,
    pub alpha: f32,
    pub eps: f32,
    sq: Vec<ArrayD<f32>>,
}

impl RmsProp {
    pub fn new(lr: f32) -> Self {
        Self { lr, alpha: 0.99, eps: 1e-8, sq: Vec::new() }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.sq.is_empty() {
            self.sq = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        for (p, s) in params.iter_mut().zip(self.sq.iter_mut()) {
            *s = &*s * self.alpha + &(&p.grad.mapv(|g| g * g) * (1.0 - self.alpha));
            let upd = ndarray::Zip::from(&p.grad)
                .and(&*s)
                .map_collect(|&g, &ss| self.lr * g / (ss.sqrt() + self.eps));
            p.value = &p.value - &upd;
        }
    }
}

/// Gradient clipping by global norm, applied before an optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct GradClip {
    pub max_norm: f32,
}

impl GradClip {
    pub fn apply(&self, params: &mut [&mut Param]) -> f32 {
        super::clip_grad_norm(params, self.max_norm)
    }
}
