//! SGD with momentum, weight decay and the "poly" learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};
use crate::params::{Gradients, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
}

impl SgdConfig {
    /// Full-scale preset: lr 0.007, momentum 0.9, weight decay 5e-4, poly power 0.9.
    pub const PRESET: SgdConfig = SgdConfig { base_lr: 0.007, momentum: 0.9, weight_decay: 5e-4, power: 0.9 };
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self::PRESET
    }
}

/// Optimizer state: per-parameter velocities plus the schedule position.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub config: SgdConfig,
    pub iter: usize,
    pub max_iter: usize,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(config: SgdConfig, max_iter: usize) -> Result<Self> {
        if max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", config.momentum)));
        }
        if config.base_lr <= 0.0 || !config.base_lr.is_finite() {
            return Err(Error::Config(format!("base learning rate {} must be positive", config.base_lr)));
        }
        if config.weight_decay < 0.0 || config.power < 0.0 {
            return Err(Error::Config("weight decay and poly power must be non-negative".into()));
        }
        Ok(Self { config, iter: 0, max_iter, velocity: BTreeMap::new() })
    }

    /// `base_lr · (1 − iter/max_iter)^power`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let frac = 1.0 - iter as f64 / self.max_iter as f64;
        self.config.base_lr * frac.max(0.0).powf(self.config.power)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.iter)
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<T>> {
        self.velocity.get(name)
    }
}

/// One momentum step:
/// `v ← μ·v + g + λ·p`, `p ← p − lr(iter)·v`, then `iter += 1`.
///
/// Parameters without a gradient entry are left untouched.
pub fn sgd_step<T: Scalar>(
    params: &mut impl Parameterized<T>,
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
) -> Result<()> {
    let lr = state.lr();
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!(
            "learning rate {lr} at iteration {} of {} is not positive",
            state.iter, state.max_iter
        )));
    }
    let (mu, wd, lr) = (T::of(state.config.momentum), T::of(state.config.weight_decay), T::of(lr));
    let velocity = &mut state.velocity;
    let mut failure = None;
    params.visit_mut("", &mut |name, p| {
        let Some(g) = grads.get(name) else { return };
        if g.shape() != p.shape() {
            failure.get_or_insert_with(|| contract!("gradient {name}: {:?} vs parameter {:?}", g.shape(), p.shape()));
            return;
        }
        let v = velocity.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    state.iter += 1;
    Ok(())
}
