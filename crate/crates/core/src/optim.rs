//! First-order optimizers: SGD with momentum and Adam, both with L2 weight decay.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Velocity buffers are keyed by parameter position and persist across steps.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// `v <- momentum * v + grad + weight_decay * p`, then `p <- p - lr * v`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::invalid("sgd_step", alloc::format!("parameter {i} has no gradient")));
        }
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), Vec::new());
        }
        let SgdConfig { lr, momentum, weight_decay } = self.config;
        for (p, v) in params.into_iter().zip(self.velocity.iter_mut()) {
            if v.len() != p.numel() {
                *v = alloc::vec![0.0; p.numel()];
            }
            let grad = p.grad().expect("checked above").to_vec();
            for ((x, vel), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vel = momentum * *vel + gv + weight_decay * *x;
                *x -= lr * *vel;
            }
            if !p.is_finite() {
                return Err(Error::NonFinite { op: "sgd_step" });
            }
        }
        Ok(())
    }
}

/// Which update rule [`Optimizer`] applies. Adam reuses [`SgdConfig`]: `lr` and
/// `weight_decay` keep their meaning and `momentum` becomes the first-moment decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments; the decay term is added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: SgdConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u32,
}

impl Adam {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::invalid("adam_step", alloc::format!("parameter {i} has no gradient")));
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), Vec::new());
            self.second.resize(params.len(), Vec::new());
        }
        self.steps += 1;
        let SgdConfig { lr, momentum: beta1, weight_decay } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.steps as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, self.steps as f64);
        for ((p, m), v) in params.into_iter().zip(self.first.iter_mut()).zip(self.second.iter_mut()) {
            if m.len() != p.numel() {
                *m = alloc::vec![0.0; p.numel()];
                *v = alloc::vec![0.0; p.numel()];
            }
            let grad = p.grad().expect("checked above").to_vec();
            for (((x, m), v), gv) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&grad) {
                let g = gv + weight_decay * *x;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *x -= lr * (*m / c1) / (libm::sqrt(*v / c2) + ADAM_EPS);
            }
            if !p.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}

/// Either update rule behind one interface, so the learning rate can be scheduled.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: SgdConfig) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd(Sgd::new(config)),
            OptimizerKind::Adam => Self::Adam(Adam::new(config)),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Self::Sgd(o) => o.config.lr = lr,
            Self::Adam(o) => o.config.lr = lr,
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        match self {
            Self::Sgd(o) => o.step(params),
            Self::Adam(o) => o.step(params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::full([1], v);
        t.accumulate_grad(&[g]).unwrap();
        t
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = [with_grad(1.5, 3.0), with_grad(-2.0, 7.0)];
        let mut opt = Sgd::new(SgdConfig { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 });
        opt.step(p.iter_mut()).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
        assert_eq!(p[1].data(), &[-2.0]);
    }

    #[test]
    fn plain_step() {
        let mut p = [with_grad(1.0, 2.0)];
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        opt.step(p.iter_mut()).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_persists() {
        let mut p = [with_grad(0.0, 1.0)];
        let mut opt = Sgd::new(SgdConfig { lr: 1.0, momentum: 0.5, weight_decay: 0.0 });
        opt.step(p.iter_mut()).unwrap();
        opt.step(p.iter_mut()).unwrap();
        // v1 = 1, v2 = 0.5 + 1 = 1.5
        assert_eq!(p[0].data()[0], -2.5);
    }

    #[test]
    fn defaults_and_missing_grad() {
        let d = SgdConfig::default();
        assert_eq!((d.lr, d.momentum, d.weight_decay), (5e-4, 0.9, 1e-4));
        let mut p = [Tensor::zeros([2])];
        assert!(Sgd::new(d).step(p.iter_mut()).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = [with_grad(1.0, 3.0), with_grad(1.0, -0.02)];
        let mut opt = Adam::new(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 });
        opt.step(p.iter_mut()).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[1].data()[0] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 0.0 });
        let mut x = Tensor::full([1], 4.0);
        for _ in 0..500 {
            let v = x.data()[0];
            x.zero_grad();
            x.accumulate_grad(&[2.0 * (v - 1.0)]).unwrap();
            opt.step(core::iter::once(&mut x)).unwrap();
        }
        assert!((x.data()[0] - 1.0).abs() < 1e-2);
    }
}
