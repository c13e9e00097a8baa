//! Learning-rate schedule and SGD with momentum and L2 weight decay.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::nn::Layer;
use crate::{Error, Result};

/// Shape of the schedule after warm-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// `(1 - progress)^power`.
    Poly { power: f64 },
    /// Half cosine from 1 to 0.
    Cosine,
    /// Multiplies by `gamma` at each third of the decay phase.
    Step { gamma: f64 },
}

impl Default for Decay {
    fn default() -> Self {
        Decay::Poly { power: 0.9 }
    }
}

/// Linear warm-up from 0 to `lr_max`, then decay towards 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub total_iterations: u64,
    pub warmup_iterations: u64,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0) {
            return Err(Error::InvalidValue("lr_max must be positive"));
        }
        if self.warmup_iterations >= self.total_iterations {
            return Err(Error::InvalidValue("warmup must be shorter than the phase"));
        }
        Ok(())
    }

    pub fn lr(&self, iter: u64) -> Result<f64> {
        if iter >= self.total_iterations {
            return Err(Error::InvalidValue("iteration outside the schedule"));
        }
        if iter < self.warmup_iterations {
            return Ok(self.lr_max * iter as f64 / self.warmup_iterations as f64);
        }
        let span = (self.total_iterations - self.warmup_iterations) as f64;
        let progress = (iter - self.warmup_iterations) as f64 / span;
        let factor = match self.decay {
            Decay::Poly { power } => (1.0 - progress).powf(power),
            Decay::Cosine => 0.5 * (1.0 + (core::f64::consts::PI * progress).cos()),
            Decay::Step { gamma } => gamma.powi((progress * 3.0).floor() as i32),
        };
        Ok(self.lr_max * factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_norm: None,
        }
    }
}

/// Heavy-ball SGD: `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`.
///
/// With zero gradient and zero momentum each step scales parameters by
/// exactly `1 − lr·wd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::InvalidValue("momentum must lie in [0, 1)"));
        }
        if config.weight_decay < 0.0 {
            return Err(Error::InvalidValue("weight decay must be non-negative"));
        }
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Momentum buffers in parameter visiting order.
    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<f32>>) {
        self.velocity = velocity;
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Global L2 norm of all parameter gradients.
    pub fn grad_norm(model: &mut dyn Layer) -> f64 {
        let mut sq = 0.0f64;
        model.visit_params("", &mut |_, p| {
            sq += p.grad.iter().map(|&g| g as f64 * g as f64).sum::<f64>();
        });
        sq.sqrt()
    }

    /// Applies one update with learning rate `lr` and clears the gradients.
    pub fn step(&mut self, model: &mut dyn Layer, lr: f64) {
        let clip_scale = match self.config.clip_norm {
            Some(max) => {
                let norm = Self::grad_norm(model);
                if norm > max && norm > 0.0 {
                    (max / norm) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let momentum = self.config.momentum as f32;
        let wd = self.config.weight_decay as f32;
        let lr = lr as f32;
        let velocity = &mut self.velocity;
        let mut index = 0;
        model.visit_params("", &mut |_, p| {
            if velocity.len() <= index {
                velocity.push(alloc::vec![0.0; p.len()]);
            }
            let v = &mut velocity[index];
            for ((theta, g), vel) in p.value.iter_mut().zip(p.grad.iter_mut()).zip(v.iter_mut()) {
                let d = *g * clip_scale + wd * *theta;
                *vel = momentum * *vel + d;
                *theta -= lr * *vel;
                *g = 0.0;
            }
            index += 1;
        });
    }
}
